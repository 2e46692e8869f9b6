#pragma once

#include "driftreg/autodiff.hpp"
#include "driftreg/types.hpp"

namespace driftreg {

// f(q) = affine(q) + sum_m w_m U(|q - c_m|) with the 3D kernel U(r) = r,
// fitted per output component. Side conditions sum(w) = 0 and C^T w = 0 hold
// by construction.
struct TpsModel {
    Points control;      // M control points
    Mat kernel_weights;  // Mx3
    Mat affine;          // 4x3, rows are coefficients of (1, x, y, z)
    double regularization = 0.0;
};

TpsModel tps_fit(const Points& control, const Mat& values, double reg);
Mat tps_eval(const TpsModel& model, const Points& queries);

// Fit on constant control points with traced values, evaluate at constant
// queries. The system matrix does not depend on traced inputs.
ad::Value tps_fit_eval_traced(const Points& control, const ad::Value& values, double reg,
                              const Points& queries);

// Mean squared Euclidean distance between paired points (mm^2).
double correspondence_loss(const Points& fixed_corr, const Points& warped_corr);
ad::Value correspondence_loss_traced(const Points& fixed_corr, const ad::Value& warped_corr);

}  // namespace driftreg
