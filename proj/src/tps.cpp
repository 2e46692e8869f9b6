#include "driftreg/tps.hpp"

#include <Eigen/Dense>

#include <cmath>

namespace driftreg {

namespace {

// [[K + reg I, P], [P^T, 0]] with K_ij = |c_i - c_j| and P rows (1, x, y, z)
Mat tps_system(const Points& control, double reg) {
    const auto m = control.rows();
    Mat a = Mat::Zero(m + 4, m + 4);
    for (Eigen::Index i = 0; i < m; ++i)
        for (Eigen::Index j = 0; j < m; ++j)
            a(i, j) = (control.row(i) - control.row(j)).norm();
    a.topLeftCorner(m, m).diagonal().array() += reg;
    for (Eigen::Index i = 0; i < m; ++i) {
        a(i, m) = 1.0;
        a.block(i, m + 1, 1, 3) = control.row(i);
        a(m, i) = 1.0;
        a.block(m + 1, i, 3, 1) = control.row(i).transpose();
    }
    return a;
}

Mat tps_basis(const Points& control, const Points& queries) {
    Mat u(queries.rows(), control.rows());
    for (Eigen::Index q = 0; q < queries.rows(); ++q)
        for (Eigen::Index m = 0; m < control.rows(); ++m)
            u(q, m) = (queries.row(q) - control.row(m)).norm();
    return u;
}

Mat affine_basis(const Points& queries) {
    Mat p(queries.rows(), 4);
    p.col(0).setOnes();
    p.rightCols(3) = queries;
    return p;
}

void check_controls(const Points& control) {
    require(control.rows() >= 4, "tps_fit: need at least 4 control points");
    Eigen::ColPivHouseholderQR<Mat> qr(affine_basis(control));
    if (qr.rank() < 4)
        throw std::invalid_argument("tps_fit: degenerate (coplanar or collinear) control points");
}

}  // namespace

TpsModel tps_fit(const Points& control, const Mat& values, double reg) {
    require(values.rows() == control.rows() && values.cols() == 3,
            "tps_fit: values must be Mx3 aligned with controls");
    require(reg >= 0.0, "tps_fit: regularization must be >= 0");
    check_controls(control);

    const auto m = control.rows();
    Mat a = tps_system(control, reg);
    Mat rhs = Mat::Zero(m + 4, 3);
    rhs.topRows(m) = values;
    Mat sol = Eigen::PartialPivLU<Mat>(a).solve(rhs);

    TpsModel model;
    model.control = control;
    model.kernel_weights = sol.topRows(m);
    model.affine = sol.bottomRows(4);
    model.regularization = reg;
    return model;
}

Mat tps_eval(const TpsModel& model, const Points& queries) {
    return tps_basis(model.control, queries) * model.kernel_weights +
           affine_basis(queries) * model.affine;
}

ad::Value tps_fit_eval_traced(const Points& control, const ad::Value& values, double reg,
                              const Points& queries) {
    require(values.rows() == control.rows() && values.cols() == 3,
            "tps_fit_eval_traced: values must be Mx3 aligned with controls");
    check_controls(control);
    using namespace ad;

    const auto m = control.rows();
    Value a = Value::constant(tps_system(control, reg));
    Value rhs = concat_rows({values, Value::constant(Mat::Zero(4, 3))});
    Value sol = solve_lu(a, rhs);
    Value w = block_rows(sol, 0, m);
    Value aff = block_rows(sol, m, 4);
    return add(matmul(Value::constant(tps_basis(control, queries)), w),
               matmul(Value::constant(affine_basis(queries)), aff));
}

double correspondence_loss(const Points& fixed_corr, const Points& warped_corr) {
    require(fixed_corr.rows() == warped_corr.rows(), "correspondence_loss: length mismatch");
    require(fixed_corr.rows() >= 1, "correspondence_loss: empty landmark set");
    return (fixed_corr - warped_corr).rowwise().squaredNorm().mean();
}

ad::Value correspondence_loss_traced(const Points& fixed_corr, const ad::Value& warped_corr) {
    require(fixed_corr.rows() == warped_corr.rows(), "correspondence_loss: length mismatch");
    require(fixed_corr.rows() >= 1, "correspondence_loss: empty landmark set");
    using namespace ad;
    Value diff = sub(Value::constant(fixed_corr), warped_corr);
    return scale(1.0 / static_cast<double>(fixed_corr.rows()), sum_all(cwise_mul(diff, diff)));
}

}  // namespace driftreg
