#pragma once

#include "driftreg/autodiff.hpp"
#include "driftreg/types.hpp"

namespace driftreg {

struct CpdParams {
    double alpha = 0.05;        // feature prior trade-off
    double rho = 0.5;           // feature Gaussian width
    double w = 0.1;             // outlier weight
    double lambda = 5.0;        // smoothness weight
    double beta = 1.0;          // kernel width (in normalized units)
    int iterations = 250;
    double sigma2_floor = 1e-6; // mm^2

    void validate() const;
};

// G_ij = exp(-|y_i - y_j|^2 / (2 beta^2))
Mat gaussian_kernel(const Points& y, double beta);

// C_pos[m][n] = exp(-|x_n - t_m|^2 / (2 sigma2)) normalized per column with
// the uniform-outlier term; stabilized by per-column max subtraction.
Mat spatial_posterior(const Points& x, const Mat& t, double sigma2, double w);

// C_feat[m][n] = exp(-|df_n - dm_m|^2 / (2 rho^2))
Mat feature_affinity(const Mat& desc_fixed, const Mat& desc_moving, double rho);

Mat combine_priors(const Mat& c_pos, const Mat& c_feat, double alpha);

struct MStepResult {
    Mat w_coeff;   // Mx3
    double sigma2; // floored
};

// Solves (G + lambda sigma2 diag(d)^-1) W = diag(d)^-1 C X - Y with
// d = C 1 (entries of diag(d)^-1 capped at 1e12), then updates sigma2 from
// the new T = Y + G W.
MStepResult m_step(const Points& x, const Points& y, const Mat& g, const Mat& c, double lambda,
                   double sigma2, double sigma2_floor);

// EM state. Point sets are centered and scaled to unit RMS norm internally;
// kernel, coefficients, and sigma2 live in normalized units.
struct CpdState {
    Points x, y;          // normalized fixed / moving
    Vec3 mu_x, mu_y;
    double scale = 1.0;
    Mat g;                // MxM
    Mat w_coeff;          // Mx3
    double sigma2 = 0.0;  // normalized units
    // descriptor half of the joint E-step exponent, weighted by
    // alpha / 0.05 so the default alpha reproduces the rho width exactly;
    // 0x0 when registering without descriptors
    Mat feat_exponent;
    int iterations_done = 0;

    Points transformed() const { return y + g * w_coeff; }
    Points displacements() const;  // mm, for the original moving points
    double sigma2_mm2() const { return sigma2 * scale * scale; }
};

CpdState cpd_init(const Points& fixed, const Points& moving, const Mat* desc_fixed,
                  const Mat* desc_moving, const CpdParams& params);
void cpd_iterate(CpdState& state, const CpdParams& params, int iterations);

Points cpd_register(const Points& fixed, const Points& moving, const Mat* desc_fixed,
                    const Mat* desc_moving, const CpdParams& params);

// Penalized negative log-likelihood (constant terms dropped); non-increasing
// across pure-CPD EM iterations until the sigma2 floor clamps.
double cpd_objective(const CpdState& state, const CpdParams& params);

// Unregularized baseline: each moving point jumps to the mean of the k fixed
// points with the nearest descriptors.
Points knn_match(const Mat& desc_fixed, const Mat& desc_moving, const Points& moving,
                 const Points& fixed, int k);

struct UnrolledCpd {
    ad::Value displacements;  // Mx3, mm
    ad::Value sigma2;         // 1x1, normalized units
};

// Differentiable fixed-iteration EM identical in value to cpd_register;
// gradients reach the descriptor inputs (and through them the network).
UnrolledCpd register_unrolled(const Points& fixed, const Points& moving,
                              const ad::Value& desc_fixed, const ad::Value& desc_moving,
                              const CpdParams& params);

}  // namespace driftreg
