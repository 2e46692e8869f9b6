#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "driftreg/types.hpp"

namespace driftreg {

// Shared numeric kernels. The traced (autodiff) and plain code paths both
// call these so forward values agree.

// Squared Euclidean distances between rows: out(m, n) = |a.row(m) - b.row(n)|^2,
// accumulated per pair in fixed order.
Mat pairwise_sqdist_mat(const Mat& a, const Mat& b);

// Cholesky factorization with a 1e-10 diagonal jitter retry; throws
// std::runtime_error with a condition estimate if both attempts fail.
Eigen::LLT<Mat> spd_factor(const Mat& a);

Mat solve_spd_mat(const Mat& a, const Mat& b);

}  // namespace driftreg
