#include "driftreg/numeric.hpp"

#include <sstream>
#include <stdexcept>

namespace driftreg {

Mat pairwise_sqdist_mat(const Mat& a, const Mat& b) {
    require(a.cols() == b.cols(), "pairwise_sqdist: dimension mismatch");
    Mat out(a.rows(), b.rows());
    for (Eigen::Index m = 0; m < a.rows(); ++m)
        for (Eigen::Index n = 0; n < b.rows(); ++n)
            out(m, n) = (a.row(m) - b.row(n)).squaredNorm();
    return out;
}

Eigen::LLT<Mat> spd_factor(const Mat& a) {
    Eigen::LLT<Mat> llt(a);
    if (llt.info() == Eigen::Success) return llt;
    Mat jittered = a + 1e-10 * Mat::Identity(a.rows(), a.cols());
    llt.compute(jittered);
    if (llt.info() == Eigen::Success) return llt;
    std::ostringstream msg;
    msg << "singular symmetric system (" << a.rows() << "x" << a.cols()
        << "), rcond estimate " << llt.rcond();
    throw std::runtime_error(msg.str());
}

Mat solve_spd_mat(const Mat& a, const Mat& b) {
    return spd_factor(a).solve(b);
}

}  // namespace driftreg
