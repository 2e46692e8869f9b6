"""Deformable point-set registration with learned graph descriptors.

Thin wrapper over the C++ core: coherent point drift with feature priors,
dynamic-graph edge-convolution descriptors, thin-plate-spline interpolation,
and TRE evaluation utilities.
"""

from ._core import (
    CpdParams,
    NetworkParams,
    RegistrationCase,
    TpsModel,
    TreStats,
    center_align,
    combine_priors,
    correspondence_loss,
    cpd_register,
    default_network,
    descriptor_forward,
    farthest_point_sample,
    feature_affinity,
    gaussian_kernel,
    gen_shape,
    knn_indices,
    knn_match,
    load_case,
    load_network,
    load_pointset,
    make_case,
    rank_sum_test,
    register_case,
    save_case,
    save_network,
    save_pointset,
    spatial_posterior,
    target_registration_error,
    tps_eval,
    tps_fit,
    train_triplet,
    triplet_loss,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
