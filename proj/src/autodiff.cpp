#include "driftreg/autodiff.hpp"

#include <Eigen/LU>

#include <cmath>
#include <stdexcept>
#include <unordered_set>
#include <utility>

#include "driftreg/numeric.hpp"
#include "driftreg/types.hpp"

namespace driftreg::ad {

struct Value::Node {
    Mat val;
    Mat grad;
    std::vector<Value> parents;
    std::function<void(const Mat&, std::vector<Value>&)> pull;
};

Value Value::constant(Mat m) {
    Value v;
    v.node_ = std::make_shared<Node>();
    v.node_->val = std::move(m);
    return v;
}

Value Value::leaf(Mat m) {
    // leaves and constants only differ in how callers use them; both simply
    // accumulate gradient
    return constant(std::move(m));
}

const Mat& Value::val() const {
    if (!node_) throw std::logic_error("use of empty ad::Value");
    return node_->val;
}

const Mat& Value::grad() const {
    if (!node_) throw std::logic_error("use of empty ad::Value");
    if (node_->grad.size() == 0) node_->grad = Mat::Zero(node_->val.rows(), node_->val.cols());
    return node_->grad;
}

void accumulate(Value& v, const Mat& g) {
    auto& grad = v.node_->grad;
    if (grad.size() == 0)
        grad = g;
    else
        grad += g;
}

Value make_op(Mat out, std::vector<Value> parents,
              std::function<void(const Mat&, std::vector<Value>&)> pull) {
    Value v;
    v.node_ = std::make_shared<Value::Node>();
    v.node_->val = std::move(out);
    v.node_->parents = std::move(parents);
    v.node_->pull = std::move(pull);
    return v;
}

void backward(const Value& loss) {
    require(loss.defined() && loss.val().size() == 1, "backward: loss must be a defined 1x1 value");

    // iterative post-order DFS for a topological order
    std::vector<Value::Node*> order;
    std::unordered_set<Value::Node*> seen;
    struct Frame {
        Value::Node* node;
        size_t next_child;
    };
    std::vector<Frame> stack;
    stack.push_back({loss.node_.get(), 0});
    seen.insert(loss.node_.get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_child < f.node->parents.size()) {
            Value::Node* child = f.node->parents[f.next_child].node_.get();
            ++f.next_child;
            if (seen.insert(child).second) stack.push_back({child, 0});
        } else {
            order.push_back(f.node);
            stack.pop_back();
        }
    }

    for (Value::Node* n : order) n->grad = Mat::Zero(n->val.rows(), n->val.cols());
    loss.node_->grad(0, 0) = 1.0;

    // `order` is post-order, so iterating it backwards visits each node after
    // all of its consumers
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Value::Node* n = *it;
        if (n->pull) n->pull(n->grad, n->parents);
    }
}

namespace {

void check_same_shape(const Value& a, const Value& b, const char* op) {
    require(a.rows() == b.rows() && a.cols() == b.cols(),
            std::string(op) + ": shape mismatch");
}

}  // namespace

Value add(const Value& a, const Value& b) {
    check_same_shape(a, b, "add");
    return make_op(a.val() + b.val(), {a, b}, [](const Mat& g, std::vector<Value>& p) {
        accumulate(p[0], g);
        accumulate(p[1], g);
    });
}

Value sub(const Value& a, const Value& b) {
    check_same_shape(a, b, "sub");
    return make_op(a.val() - b.val(), {a, b}, [](const Mat& g, std::vector<Value>& p) {
        accumulate(p[0], g);
        accumulate(p[1], -g);
    });
}

Value neg(const Value& a) {
    return make_op(-a.val(), {a}, [](const Mat& g, std::vector<Value>& p) {
        accumulate(p[0], -g);
    });
}

Value cwise_mul(const Value& a, const Value& b) {
    check_same_shape(a, b, "cwise_mul");
    return make_op(a.val().cwiseProduct(b.val()), {a, b},
                   [](const Mat& g, std::vector<Value>& p) {
                       accumulate(p[0], g.cwiseProduct(p[1].val()));
                       accumulate(p[1], g.cwiseProduct(p[0].val()));
                   });
}

Value cwise_inv(const Value& a) {
    Mat y = a.val().cwiseInverse();
    return make_op(y, {a}, [y](const Mat& g, std::vector<Value>& p) {
        accumulate(p[0], (-g.array() * y.array() * y.array()).matrix());
    });
}

Value exp(const Value& a) {
    Mat y = a.val().array().exp().matrix();
    return make_op(y, {a}, [y](const Mat& g, std::vector<Value>& p) {
        accumulate(p[0], g.cwiseProduct(y));
    });
}

Value leaky_relu(const Value& a, double slope) {
    const Mat& x = a.val();
    Mat y = x.unaryExpr([slope](double v) { return v > 0.0 ? v : slope * v; });
    return make_op(y, {a}, [slope](const Mat& g, std::vector<Value>& p) {
        Mat mask = p[0].val().unaryExpr([slope](double v) { return v > 0.0 ? 1.0 : slope; });
        accumulate(p[0], g.cwiseProduct(mask));
    });
}

Value relu(const Value& a) { return leaky_relu(a, 0.0); }

Value clamp_min(const Value& a, double lo) {
    Mat y = a.val().cwiseMax(lo);
    return make_op(y, {a}, [lo](const Mat& g, std::vector<Value>& p) {
        Mat mask = p[0].val().unaryExpr([lo](double v) { return v > lo ? 1.0 : 0.0; });
        accumulate(p[0], g.cwiseProduct(mask));
    });
}

Value scale(double s, const Value& a) {
    return make_op(s * a.val(), {a}, [s](const Mat& g, std::vector<Value>& p) {
        accumulate(p[0], s * g);
    });
}

Value add_const(const Value& a, double c) {
    return make_op((a.val().array() + c).matrix(), {a}, [](const Mat& g, std::vector<Value>& p) {
        accumulate(p[0], g);
    });
}

Value spow(const Value& s, double e) {
    require(s.val().size() == 1, "spow: expects a 1x1 value");
    double x = s.scalar_val();
    Mat y = Mat::Constant(1, 1, std::pow(x, e));
    return make_op(y, {s}, [e, x](const Mat& g, std::vector<Value>& p) {
        accumulate(p[0], Mat::Constant(1, 1, g(0, 0) * e * std::pow(x, e - 1.0)));
    });
}

Value slog(const Value& s) {
    require(s.val().size() == 1, "slog: expects a 1x1 value");
    double x = s.scalar_val();
    Mat y = Mat::Constant(1, 1, std::log(x));
    return make_op(y, {s}, [x](const Mat& g, std::vector<Value>& p) {
        accumulate(p[0], Mat::Constant(1, 1, g(0, 0) / x));
    });
}

Value matmul(const Value& a, const Value& b) {
    require(a.cols() == b.rows(), "matmul: inner dimension mismatch");
    return make_op(a.val() * b.val(), {a, b}, [](const Mat& g, std::vector<Value>& p) {
        accumulate(p[0], g * p[1].val().transpose());
        accumulate(p[1], p[0].val().transpose() * g);
    });
}

Value transpose(const Value& a) {
    return make_op(a.val().transpose(), {a}, [](const Mat& g, std::vector<Value>& p) {
        accumulate(p[0], g.transpose());
    });
}

Value scalar_mul(const Value& s, const Value& a) {
    require(s.val().size() == 1, "scalar_mul: s must be 1x1");
    return make_op(s.scalar_val() * a.val(), {s, a}, [](const Mat& g, std::vector<Value>& p) {
        accumulate(p[0], Mat::Constant(1, 1, (g.array() * p[1].val().array()).sum()));
        accumulate(p[1], p[0].scalar_val() * g);
    });
}

Value solve_spd(const Value& a, const Value& b) {
    auto llt = std::make_shared<Eigen::LLT<Mat>>(spd_factor(a.val()));
    Mat x = llt->solve(b.val());
    return make_op(x, {a, b}, [llt, x](const Mat& g, std::vector<Value>& p) {
        Mat gb = llt->solve(g);  // A is symmetric
        accumulate(p[1], gb);
        accumulate(p[0], -gb * x.transpose());
    });
}

Value solve_lu(const Value& a, const Value& b) {
    auto lu = std::make_shared<Eigen::PartialPivLU<Mat>>(a.val());
    Mat x = lu->solve(b.val());
    return make_op(x, {a, b}, [lu, x](const Mat& g, std::vector<Value>& p) {
        Mat gb = lu->transpose().solve(g);
        accumulate(p[1], gb);
        accumulate(p[0], -gb * x.transpose());
    });
}

Value concat_cols(const std::vector<Value>& parts) {
    require(!parts.empty(), "concat_cols: empty");
    Eigen::Index rows = parts[0].rows(), cols = 0;
    for (const auto& p : parts) {
        require(p.rows() == rows, "concat_cols: row mismatch");
        cols += p.cols();
    }
    Mat out(rows, cols);
    Eigen::Index at = 0;
    for (const auto& p : parts) {
        out.middleCols(at, p.cols()) = p.val();
        at += p.cols();
    }
    return make_op(out, parts, [](const Mat& g, std::vector<Value>& p) {
        Eigen::Index at = 0;
        for (auto& part : p) {
            accumulate(part, g.middleCols(at, part.cols()));
            at += part.cols();
        }
    });
}

Value concat_rows(const std::vector<Value>& parts) {
    require(!parts.empty(), "concat_rows: empty");
    Eigen::Index cols = parts[0].cols(), rows = 0;
    for (const auto& p : parts) {
        require(p.cols() == cols, "concat_rows: col mismatch");
        rows += p.rows();
    }
    Mat out(rows, cols);
    Eigen::Index at = 0;
    for (const auto& p : parts) {
        out.middleRows(at, p.rows()) = p.val();
        at += p.rows();
    }
    return make_op(out, parts, [](const Mat& g, std::vector<Value>& p) {
        Eigen::Index at = 0;
        for (auto& part : p) {
            accumulate(part, g.middleRows(at, part.rows()));
            at += part.rows();
        }
    });
}

Value gather_rows(const Value& a, std::vector<int> idx) {
    Mat out(static_cast<Eigen::Index>(idx.size()), a.cols());
    for (size_t i = 0; i < idx.size(); ++i) {
        require(idx[i] >= 0 && idx[i] < a.rows(), "gather_rows: index out of range");
        out.row(static_cast<Eigen::Index>(i)) = a.val().row(idx[i]);
    }
    return make_op(out, {a}, [idx = std::move(idx)](const Mat& g, std::vector<Value>& p) {
        Mat ga = Mat::Zero(p[0].rows(), p[0].cols());
        for (size_t i = 0; i < idx.size(); ++i)
            ga.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
        accumulate(p[0], ga);
    });
}

Value block_rows(const Value& a, Eigen::Index start, Eigen::Index count) {
    require(start >= 0 && start + count <= a.rows(), "block_rows: out of range");
    return make_op(a.val().middleRows(start, count), {a},
                   [start, count](const Mat& g, std::vector<Value>& p) {
                       Mat ga = Mat::Zero(p[0].rows(), p[0].cols());
                       ga.middleRows(start, count) = g;
                       accumulate(p[0], ga);
                   });
}

Value diag(const Value& d) {
    require(d.cols() == 1, "diag: expects a column vector");
    Mat out = Mat::Zero(d.rows(), d.rows());
    out.diagonal() = d.val().col(0);
    return make_op(out, {d}, [](const Mat& g, std::vector<Value>& p) {
        accumulate(p[0], g.diagonal());
    });
}

Value add_rowvec(const Value& a, const Value& r) {
    require(r.rows() == 1 && r.cols() == a.cols(), "add_rowvec: shape mismatch");
    Mat out = a.val().rowwise() + r.val().row(0);
    return make_op(out, {a, r}, [](const Mat& g, std::vector<Value>& p) {
        accumulate(p[0], g);
        accumulate(p[1], g.colwise().sum());
    });
}

Value sub_rowvec(const Value& a, const Value& r) {
    require(r.rows() == 1 && r.cols() == a.cols(), "sub_rowvec: shape mismatch");
    Mat out = a.val().rowwise() - r.val().row(0);
    return make_op(out, {a, r}, [](const Mat& g, std::vector<Value>& p) {
        accumulate(p[0], g);
        accumulate(p[1], -g.colwise().sum());
    });
}

Value scale_rows(const Value& a, const Value& d) {
    require(d.cols() == 1 && d.rows() == a.rows(), "scale_rows: shape mismatch");
    Mat out = d.val().col(0).asDiagonal() * a.val();
    return make_op(out, {a, d}, [](const Mat& g, std::vector<Value>& p) {
        accumulate(p[0], p[1].val().col(0).asDiagonal() * g);
        accumulate(p[1], g.cwiseProduct(p[0].val()).rowwise().sum());
    });
}

Value scale_cols(const Value& a, const Value& r) {
    require(r.rows() == 1 && r.cols() == a.cols(), "scale_cols: shape mismatch");
    Mat out = (a.val().array().rowwise() * r.val().row(0).array()).matrix();
    return make_op(out, {a, r}, [](const Mat& g, std::vector<Value>& p) {
        accumulate(p[0], (g.array().rowwise() * p[1].val().row(0).array()).matrix());
        accumulate(p[1], g.cwiseProduct(p[0].val()).colwise().sum());
    });
}

Value div_colwise(const Value& a, const Value& d) {
    require(d.rows() == 1 && d.cols() == a.cols(), "div_colwise: shape mismatch");
    Mat out = (a.val().array().rowwise() / d.val().row(0).array()).matrix();
    return make_op(out, {a, d}, [out](const Mat& g, std::vector<Value>& p) {
        Eigen::Array<double, 1, Eigen::Dynamic> dv = p[1].val().row(0).array();
        accumulate(p[0], (g.array().rowwise() / dv).matrix());
        Mat gd = (-(g.cwiseProduct(out).colwise().sum().array() / dv)).matrix();
        accumulate(p[1], gd);
    });
}

Value sum_all(const Value& a) {
    return make_op(Mat::Constant(1, 1, a.val().sum()), {a},
                   [](const Mat& g, std::vector<Value>& p) {
                       accumulate(p[0], Mat::Constant(p[0].rows(), p[0].cols(), g(0, 0)));
                   });
}

Value rowwise_sum(const Value& a) {
    return make_op(a.val().rowwise().sum(), {a}, [](const Mat& g, std::vector<Value>& p) {
        accumulate(p[0], g.replicate(1, p[0].cols()));
    });
}

Value colwise_sum(const Value& a) {
    return make_op(a.val().colwise().sum(), {a}, [](const Mat& g, std::vector<Value>& p) {
        accumulate(p[0], g.replicate(p[0].rows(), 1));
    });
}

Value mean_all(const Value& a) {
    return scale(1.0 / static_cast<double>(a.val().size()), sum_all(a));
}

Value group_max_rows(const Value& a, int group) {
    require(group >= 1 && a.rows() % group == 0, "group_max_rows: rows not divisible by group");
    const Eigen::Index n = a.rows() / group;
    const Eigen::Index f = a.cols();
    Mat out(n, f);
    std::vector<Eigen::Index> arg(static_cast<size_t>(n * f));
    const Mat& x = a.val();
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index c = 0; c < f; ++c) {
            Eigen::Index best_r = i * group;
            double best = x(best_r, c);
            for (int j = 1; j < group; ++j) {
                Eigen::Index r = i * group + j;
                if (x(r, c) > best) {
                    best = x(r, c);
                    best_r = r;
                }
            }
            out(i, c) = best;
            arg[static_cast<size_t>(i * f + c)] = best_r;
        }
    }
    return make_op(out, {a}, [arg = std::move(arg), f](const Mat& g, std::vector<Value>& p) {
        Mat ga = Mat::Zero(p[0].rows(), p[0].cols());
        for (Eigen::Index i = 0; i < g.rows(); ++i)
            for (Eigen::Index c = 0; c < f; ++c)
                ga(arg[static_cast<size_t>(i * f + c)], c) += g(i, c);
        accumulate(p[0], ga);
    });
}

Value l2_normalize_rows(const Value& a) {
    const Mat& x = a.val();
    Eigen::VectorXd norms(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i)
        norms(i) = std::max(x.row(i).norm(), 1e-30);
    Mat y = norms.cwiseInverse().asDiagonal() * x;
    return make_op(y, {a}, [y, norms](const Mat& g, std::vector<Value>& p) {
        Mat gx(g.rows(), g.cols());
        for (Eigen::Index i = 0; i < g.rows(); ++i) {
            double gy = g.row(i).dot(y.row(i));
            gx.row(i) = (g.row(i) - gy * y.row(i)) / norms(i);
        }
        accumulate(p[0], gx);
    });
}

Value pairwise_sqdist(const Value& a, const Value& b) {
    Mat out = pairwise_sqdist_mat(a.val(), b.val());
    return make_op(out, {a, b}, [](const Mat& g, std::vector<Value>& p) {
        const Mat& av = p[0].val();
        const Mat& bv = p[1].val();
        Eigen::VectorXd rs = g.rowwise().sum();
        Eigen::VectorXd cs = g.colwise().sum().transpose();
        Mat ga = 2.0 * (rs.asDiagonal() * av - g * bv);
        Mat gb = 2.0 * (cs.asDiagonal() * bv - g.transpose() * av);
        accumulate(p[0], ga);
        accumulate(p[1], gb);
    });
}

Value dot_all(const Value& a, const Value& b) {
    return sum_all(cwise_mul(a, b));
}

}  // namespace driftreg::ad
