#include "driftreg/cpd.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <utility>
#include <vector>

#include "driftreg/numeric.hpp"

namespace driftreg {

namespace {
constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kRowSumFloor = 1e-12;  // caps diag(d)^-1 entries at 1e12
// alpha at which the feature channel of the joint posterior gets exactly the
// Eq.-style width rho; the exponent weight scales linearly in alpha
constexpr double kAlphaReference = 0.05;
}  // namespace

void CpdParams::validate() const {
    require(w >= 0.0 && w < 1.0, "CpdParams: w must be in [0, 1)");
    require(alpha >= 0.0, "CpdParams: alpha must be >= 0");
    require(rho > 0.0, "CpdParams: rho must be > 0");
    require(lambda > 0.0, "CpdParams: lambda must be > 0");
    require(beta > 0.0, "CpdParams: beta must be > 0");
    require(iterations >= 1, "CpdParams: iterations must be >= 1");
    require(sigma2_floor > 0.0, "CpdParams: sigma2_floor must be > 0");
}

Mat gaussian_kernel(const Points& y, double beta) {
    require(beta > 0.0, "gaussian_kernel: beta must be > 0");
    const double factor = -1.0 / (2.0 * beta * beta);
    return (pairwise_sqdist_mat(y, y) * factor).array().exp().matrix();
}

namespace {

// E-step posterior over a (possibly feature-augmented) exponent matrix,
// stabilized by subtracting the per-column max (it cancels analytically).
// The outlier term is evaluated as exp(log c - max), capped at exp(700):
// columns no moving point can explain saturate to zero mass instead of
// overflowing. feat_exponent, when present, carries the descriptor half of
// the joint Gaussian, already weighted.
Mat posterior_impl(const Points& x, const Mat& t, double sigma2, double w,
                   const Mat* feat_exponent) {
    require(sigma2 > 0.0, "spatial_posterior: sigma2 must be > 0");
    require(w >= 0.0 && w < 1.0, "spatial_posterior: w must be in [0, 1)");
    const auto m = t.rows();
    const auto n = x.rows();

    const double factor = -1.0 * (1.0 / (2.0 * sigma2));
    Mat expo = pairwise_sqdist_mat(t, x) * factor;  // MxN, entries <= 0
    if (feat_exponent) expo += *feat_exponent;
    Eigen::RowVectorXd col_max = expo.colwise().maxCoeff();
    Mat en = ((expo.rowwise() - col_max).array().exp()).matrix();

    const double kw = (w / (1.0 - w)) * (static_cast<double>(m) / static_cast<double>(n));
    const double c = std::pow(kTwoPi * sigma2, 1.5) * kw;

    Eigen::RowVectorXd denom = en.colwise().sum();
    if (c > 0.0) {
        const double log_c = std::log(c);
        denom += (log_c - col_max.array()).min(700.0).exp().matrix();
    }
    return (en.array().rowwise() / denom.array()).matrix();
}

// W solve of the M-step, separated so the variance update can run on a
// different correspondence matrix than the displacement update
Mat solve_w_coeff(const Points& x, const Points& y, const Mat& g, const Mat& c, double lambda,
                  double sigma2) {
    Eigen::VectorXd d = c.rowwise().sum();
    Eigen::VectorXd dinv = d.cwiseMax(kRowSumFloor).cwiseInverse();
    Mat a = g;
    a.diagonal() += (lambda * sigma2) * dinv;
    Mat rhs = dinv.asDiagonal() * (c * x) - y;
    return solve_spd_mat(a, rhs);
}

double sigma2_update(const Points& x, const Mat& t, const Mat& c, double sigma2_floor) {
    Eigen::VectorXd d = c.rowwise().sum();
    Mat cx = c * x;
    Eigen::VectorXd xsq = x.cwiseProduct(x).rowwise().sum();
    Eigen::VectorXd tsq = t.cwiseProduct(t).rowwise().sum();
    double term1 = (c.colwise().sum() * xsq)(0, 0);
    double term2 = cx.cwiseProduct(t).sum();
    double term3 = d.cwiseProduct(tsq).sum();
    double np = c.sum();
    double sigma2_new = (term1 - 2.0 * term2 + term3) * (1.0 / (3.0 * np));
    return std::max(sigma2_new, sigma2_floor);
}

}  // namespace

Mat spatial_posterior(const Points& x, const Mat& t, double sigma2, double w) {
    return posterior_impl(x, t, sigma2, w, nullptr);
}

Mat feature_affinity(const Mat& desc_fixed, const Mat& desc_moving, double rho) {
    require(rho > 0.0, "feature_affinity: rho must be > 0");
    require(desc_fixed.cols() == desc_moving.cols(), "feature_affinity: descriptor dim mismatch");
    const double factor = -1.0 / (2.0 * rho * rho);
    return (pairwise_sqdist_mat(desc_moving, desc_fixed) * factor).array().exp().matrix();
}

Mat combine_priors(const Mat& c_pos, const Mat& c_feat, double alpha) {
    require(alpha >= 0.0, "combine_priors: alpha must be >= 0");
    require(c_pos.rows() == c_feat.rows() && c_pos.cols() == c_feat.cols(),
            "combine_priors: shape mismatch");
    return c_pos + alpha * c_feat;
}

MStepResult m_step(const Points& x, const Points& y, const Mat& g, const Mat& c, double lambda,
                   double sigma2, double sigma2_floor) {
    require(c.rows() == y.rows() && c.cols() == x.rows(), "m_step: C shape mismatch");
    require(c.allFinite(), "m_step: non-finite correspondence matrix");

    Mat w_coeff = solve_w_coeff(x, y, g, c, lambda, sigma2);
    Mat t = y + g * w_coeff;
    double sigma2_new = sigma2_update(x, t, c, sigma2_floor);
    return {std::move(w_coeff), sigma2_new};
}

Points CpdState::displacements() const {
    Points disp = (scale * (g * w_coeff)).rowwise() + (mu_x - mu_y);
    return disp;
}

CpdState cpd_init(const Points& fixed, const Points& moving, const Mat* desc_fixed,
                  const Mat* desc_moving, const CpdParams& params) {
    params.validate();
    require(fixed.rows() >= 1 && moving.rows() >= 1, "cpd_init: empty point set");
    require((desc_fixed == nullptr) == (desc_moving == nullptr),
            "cpd_init: descriptors must be given for both sets or neither");
    if (desc_fixed) {
        require(desc_fixed->rows() == fixed.rows() && desc_moving->rows() == moving.rows(),
                "cpd_init: descriptor row counts must match the point sets");
    }

    CpdState s;
    s.mu_x = fixed.colwise().mean();
    s.mu_y = moving.colwise().mean();
    Points xc = fixed.rowwise() - s.mu_x;
    Points yc = moving.rowwise() - s.mu_y;
    double total = xc.squaredNorm() + yc.squaredNorm();
    s.scale = std::sqrt(total / static_cast<double>(fixed.rows() + moving.rows()));
    if (s.scale <= 0.0) s.scale = 1.0;  // all points coincide
    s.x = xc / s.scale;
    s.y = yc / s.scale;

    s.g = gaussian_kernel(s.y, params.beta);
    s.w_coeff = Mat::Zero(moving.rows(), 3);
    s.sigma2 = pairwise_sqdist_mat(s.y, s.x).sum() /
               (3.0 * static_cast<double>(fixed.rows()) * static_cast<double>(moving.rows()));
    if (desc_fixed) s.c_feat = feature_affinity(*desc_fixed, *desc_moving, params.rho);
    return s;
}

void cpd_iterate(CpdState& state, const CpdParams& params, int iterations) {
    const double floor_norm = params.sigma2_floor / (state.scale * state.scale);
    const bool has_feat = state.c_feat.size() > 0;
    for (int it = 0; it < iterations; ++it) {
        Points t = state.transformed();
        Mat c_pos = spatial_posterior_impl(state.x, t, state.sigma2, params.w);
        // The combined prior steers the displacements. Each combined column
        // is rescaled back to the spatial posterior's column mass, so the
        // feature prior redistributes correspondence probability instead of
        // adding net mass, and the variance anneals on the spatial residual
        // alone. alpha = 0 reduces to plain CPD bit for bit.
        Mat c_combined;
        if (has_feat) {
            c_combined = combine_priors(c_pos, state.c_feat, params.alpha);
            Eigen::RowVectorXd ratio =
                (c_pos.colwise().sum().array() / c_combined.colwise().sum().array()).matrix();
            c_combined = (c_combined.array().rowwise() * ratio.array()).matrix();
        }
        const Mat& c = has_feat ? c_combined : c_pos;
        state.w_coeff = solve_w_coeff(state.x, state.y, state.g, c, params.lambda, state.sigma2);
        Points t_new = state.transformed();
        state.sigma2 = sigma2_update(state.x, t_new, c_pos, floor_norm);
        ++state.iterations_done;
    }
}

Points cpd_register(const Points& fixed, const Points& moving, const Mat* desc_fixed,
                    const Mat* desc_moving, const CpdParams& params) {
    CpdState s = cpd_init(fixed, moving, desc_fixed, desc_moving, params);
    cpd_iterate(s, params, params.iterations);
    return s.displacements();
}

double cpd_objective(const CpdState& state, const CpdParams& params) {
    const auto m = state.y.rows();
    const auto n = state.x.rows();
    Points t = state.transformed();

    const double factor = -1.0 * (1.0 / (2.0 * state.sigma2));
    Mat expo = pairwise_sqdist_mat(t, state.x) * factor;
    Eigen::RowVectorXd col_max = expo.colwise().maxCoeff();
    Mat en = ((expo.rowwise() - col_max).array().exp()).matrix();

    const double kw =
        (params.w / (1.0 - params.w)) * (static_cast<double>(m) / static_cast<double>(n));
    const double c = std::pow(kTwoPi * state.sigma2, 1.5) * kw;
    const double log_c = c > 0.0 ? std::log(c) : 0.0;

    double nll = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
        double se = en.col(j).sum();  // >= 1, the max entry is exp(0)
        double lse;
        if (c > 0.0 && log_c - col_max(j) > 700.0) {
            // outlier mass dominates; log(se + e^u) = u + log1p(se e^-u)
            double u = log_c - col_max(j);
            lse = u + std::log1p(se * std::exp(-u));
        } else {
            lse = std::log(se + (c > 0.0 ? std::exp(log_c - col_max(j)) : 0.0));
        }
        nll -= col_max(j) + lse;
    }
    nll += 1.5 * static_cast<double>(n) * std::log(kTwoPi * state.sigma2);
    double penalty =
        0.5 * params.lambda * (state.w_coeff.transpose() * state.g * state.w_coeff).trace();
    return nll + penalty;
}

Points knn_match(const Mat& desc_fixed, const Mat& desc_moving, const Points& moving,
                 const Points& fixed, int k) {
    require(k >= 1, "knn_match: k must be >= 1");
    require(k <= fixed.rows(), "knn_match: k exceeds the fixed set size");
    require(desc_fixed.rows() == fixed.rows() && desc_moving.rows() == moving.rows(),
            "knn_match: descriptor row counts must match the point sets");
    require(desc_fixed.cols() == desc_moving.cols(), "knn_match: descriptor dim mismatch");

    Points disp(moving.rows(), 3);
    std::vector<std::pair<double, int>> cand(static_cast<size_t>(fixed.rows()));
    for (Eigen::Index i = 0; i < moving.rows(); ++i) {
        for (Eigen::Index j = 0; j < fixed.rows(); ++j)
            cand[static_cast<size_t>(j)] = {
                (desc_moving.row(i) - desc_fixed.row(j)).squaredNorm(), static_cast<int>(j)};
        std::partial_sort(cand.begin(), cand.begin() + k, cand.end());
        Vec3 mean = Vec3::Zero();
        for (int j = 0; j < k; ++j) mean += fixed.row(cand[static_cast<size_t>(j)].second);
        mean /= static_cast<double>(k);
        disp.row(i) = mean - moving.row(i);
    }
    return disp;
}

UnrolledCpd register_unrolled(const Points& fixed, const Points& moving,
                              const ad::Value& desc_fixed, const ad::Value& desc_moving,
                              const CpdParams& params) {
    params.validate();
    require(params.iterations <= 50, "register_unrolled: iteration guard (<= 50) exceeded");
    require(desc_fixed.defined() && desc_moving.defined(),
            "register_unrolled: descriptors must carry tape nodes");
    require(desc_fixed.rows() == fixed.rows() && desc_moving.rows() == moving.rows(),
            "register_unrolled: descriptor row counts must match the point sets");

    using namespace ad;

    const auto m = moving.rows();
    const auto n = fixed.rows();

    // normalization mirrors cpd_init
    Vec3 mu_x = fixed.colwise().mean();
    Vec3 mu_y = moving.colwise().mean();
    Points xc_mm = fixed.rowwise() - mu_x;
    Points yc_mm = moving.rowwise() - mu_y;
    double total = xc_mm.squaredNorm() + yc_mm.squaredNorm();
    double scale_mm = std::sqrt(total / static_cast<double>(n + m));
    if (scale_mm <= 0.0) scale_mm = 1.0;
    Points xn = xc_mm / scale_mm;
    Points yn = yc_mm / scale_mm;
    const double floor_norm = params.sigma2_floor / (scale_mm * scale_mm);

    Value xv = Value::constant(xn);
    Value yv = Value::constant(yn);
    Value gv = Value::constant(gaussian_kernel(yn, params.beta));
    Value xsq = Value::constant(xn.cwiseProduct(xn).rowwise().sum());

    const double rho_factor = -1.0 / (2.0 * params.rho * params.rho);
    Value c_feat = ad::exp(scale(rho_factor, pairwise_sqdist(desc_moving, desc_fixed)));

    Value w_coeff = Value::constant(Mat::Zero(m, 3));
    Value sigma2 = Value::scalar(pairwise_sqdist_mat(yn, xn).sum() /
                                 (3.0 * static_cast<double>(n) * static_cast<double>(m)));
    const double kw = (params.w / (1.0 - params.w)) *
                      (static_cast<double>(m) / static_cast<double>(n));
    Value ones_row = Value::constant(Mat::Ones(1, n));

    for (int it = 0; it < params.iterations; ++it) {
        Value t = add(yv, matmul(gv, w_coeff));

        // E-step mirroring spatial_posterior_impl: the detached max offset
        // cancels analytically, so treating it as constant keeps gradients
        // exact. alpha = 0 still routes the feature prior through the tape
        // (with a zero factor), so descriptor gradients come back exactly
        // zero.
        Value factor = scale(-1.0, cwise_inv(scale(2.0, sigma2)));
        Value expo = scalar_mul(factor, pairwise_sqdist(t, xv));
        Eigen::RowVectorXd col_max = expo.val().colwise().maxCoeff();

        Value en = ad::exp(sub_rowvec(expo, Value::constant(col_max)));
        Value denom_pos = colwise_sum(en);
        if (kw > 0.0) {
            Value c_out = scale(kw, spow(scale(kTwoPi, sigma2), 1.5));
            Value lc_row = scalar_mul(slog(c_out), ones_row);
            Value u = sub(lc_row, Value::constant(col_max));
            Value c_term = ad::exp(neg(clamp_min(neg(u), -700.0)));  // exp(min(u, 700))
            denom_pos = add(denom_pos, c_term);
        }
        Value c_pos = div_colwise(en, denom_pos);  // drives the variance
        // combined prior, rescaled to preserve each column's posterior mass
        Value c_comb = add(c_pos, scale(params.alpha, c_feat));
        Value ratio = div_colwise(colwise_sum(c_pos), colwise_sum(c_comb));
        Value c = scale_cols(c_comb, ratio);  // drives the displacements

        // M-step
        Value d = rowwise_sum(c);
        Value dinv = cwise_inv(clamp_min(d, kRowSumFloor));
        Value a = add(gv, scalar_mul(scale(params.lambda, sigma2), diag(dinv)));
        Value rhs = sub(scale_rows(matmul(c, xv), dinv), yv);
        w_coeff = solve_spd(a, rhs);

        Value t_new = add(yv, matmul(gv, w_coeff));
        Value d_pos = rowwise_sum(c_pos);
        Value cx_pos = matmul(c_pos, xv);
        Value term1 = matmul(colwise_sum(c_pos), xsq);
        Value term2 = sum_all(cwise_mul(cx_pos, t_new));
        Value term3 = sum_all(cwise_mul(d_pos, rowwise_sum(cwise_mul(t_new, t_new))));
        Value np = sum_all(c_pos);
        Value numer = add(sub(term1, scale(2.0, term2)), term3);
        sigma2 = clamp_min(scalar_mul(cwise_inv(scale(3.0, np)), numer), floor_norm);
    }

    Value disp = add_rowvec(scale(scale_mm, matmul(gv, w_coeff)),
                            Value::constant(mu_x - mu_y));
    return {disp, sigma2};
}

}  // namespace driftreg
