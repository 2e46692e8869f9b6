#pragma once

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <vector>

namespace driftreg::ad {

using Mat = Eigen::MatrixXd;

// Reverse-mode tape over dense 64-bit matrices. Graphs are built
// define-by-run through the free functions below; backward() propagates from
// a 1x1 loss node, visiting every reachable node exactly once in reverse
// topological order. Scalars are 1x1 matrices.
class Value {
public:
    Value() = default;

    static Value constant(Mat m);
    static Value leaf(Mat m);  // participates in gradients
    static Value scalar(double v) { return constant(Mat::Constant(1, 1, v)); }

    bool defined() const { return node_ != nullptr; }
    const Mat& val() const;
    // Gradient accumulated by the last backward() pass; zero matrix if the
    // node was not reached.
    const Mat& grad() const;
    double scalar_val() const { return val()(0, 0); }
    Eigen::Index rows() const { return val().rows(); }
    Eigen::Index cols() const { return val().cols(); }

private:
    struct Node;
    std::shared_ptr<Node> node_;

    friend Value make_op(Mat out, std::vector<Value> parents,
                         std::function<void(const Mat&, std::vector<Value>&)> pull);
    friend void backward(const Value& loss);
    friend void accumulate(Value& v, const Mat& g);
};

void backward(const Value& loss);

// elementwise
Value add(const Value& a, const Value& b);
Value sub(const Value& a, const Value& b);
Value neg(const Value& a);
Value cwise_mul(const Value& a, const Value& b);
Value cwise_inv(const Value& a);
Value exp(const Value& a);
Value leaky_relu(const Value& a, double slope);
Value relu(const Value& a);
Value clamp_min(const Value& a, double lo);
Value scale(double s, const Value& a);
Value add_const(const Value& a, double c);
Value spow(const Value& s, double e);  // 1x1 power
Value slog(const Value& s);            // 1x1 natural log

// linear algebra
Value matmul(const Value& a, const Value& b);
Value transpose(const Value& a);
Value scalar_mul(const Value& s, const Value& a);  // s is 1x1
Value solve_spd(const Value& a, const Value& b);   // Cholesky, diagonal jitter on failure
Value solve_lu(const Value& a, const Value& b);    // partial-pivot LU

// structure
Value concat_cols(const std::vector<Value>& parts);
Value concat_rows(const std::vector<Value>& parts);
Value gather_rows(const Value& a, std::vector<int> idx);
Value block_rows(const Value& a, Eigen::Index start, Eigen::Index count);
Value diag(const Value& d);             // Mx1 -> MxM
Value add_rowvec(const Value& a, const Value& r);
Value sub_rowvec(const Value& a, const Value& r);
Value scale_rows(const Value& a, const Value& d);  // diag(d) * a, d is Mx1
Value scale_cols(const Value& a, const Value& r);  // a * diag(r), r is 1xN
Value div_colwise(const Value& a, const Value& d); // a(:,n) / d(n), d is 1xN

// reductions
Value sum_all(const Value& a);       // 1x1
Value rowwise_sum(const Value& a);   // Mx1
Value colwise_sum(const Value& a);   // 1xN
Value mean_all(const Value& a);
// (N*group)xF -> NxF elementwise max over consecutive blocks of `group`
// rows; at ties the gradient flows to the lowest-index argmax row.
Value group_max_rows(const Value& a, int group);
Value l2_normalize_rows(const Value& a);

// composites
Value pairwise_sqdist(const Value& a, const Value& b);  // MxD,NxD -> MxN
Value dot_all(const Value& a, const Value& b);          // sum(a .* b)

}  // namespace driftreg::ad
