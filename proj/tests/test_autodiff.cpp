#include <doctest.h>

#include <functional>
#include <random>

#include "driftreg/autodiff.hpp"
#include "driftreg/numeric.hpp"

using namespace driftreg;
using ad::Value;

namespace {

Mat random_mat(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed, double lo = -1.0,
               double hi = 1.0) {
    std::mt19937_64 rng(seed);
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j)
            m(i, j) = lo + (hi - lo) * (static_cast<double>(rng() >> 11) * 0x1.0p-53);
    return m;
}

// central finite differences on every input entry against tape gradients;
// the scalar loss is a fixed random projection of the output
double fd_max_rel_error(std::vector<Mat> inputs,
                        const std::function<Value(std::vector<Value>&)>& build,
                        double h = 1e-5) {
    auto eval = [&](const std::vector<Mat>& ins) {
        std::vector<Value> leaves;
        for (const auto& m : ins) leaves.push_back(Value::leaf(m));
        return build(leaves);
    };

    std::vector<Value> leaves;
    for (const auto& m : inputs) leaves.push_back(Value::leaf(m));
    Value loss = build(leaves);
    REQUIRE(loss.val().size() == 1);
    ad::backward(loss);

    double max_rel = 0.0;
    for (size_t k = 0; k < inputs.size(); ++k) {
        const Mat analytic = leaves[k].grad();
        for (Eigen::Index i = 0; i < inputs[k].rows(); ++i) {
            for (Eigen::Index j = 0; j < inputs[k].cols(); ++j) {
                std::vector<Mat> up = inputs, down = inputs;
                up[k](i, j) += h;
                down[k](i, j) -= h;
                double numeric = (eval(up).scalar_val() - eval(down).scalar_val()) / (2.0 * h);
                double a = analytic(i, j);
                double rel = std::abs(a - numeric) /
                             std::max({std::abs(a), std::abs(numeric), 1e-8});
                max_rel = std::max(max_rel, rel);
            }
        }
    }
    return max_rel;
}

Value project(const Value& out, std::uint64_t seed) {
    Mat r = random_mat(out.rows(), out.cols(), seed, 0.2, 1.0);
    return ad::sum_all(ad::cwise_mul(out, Value::constant(r)));
}

}  // namespace

TEST_CASE("finite differences agree for every elementwise primitive") {
    Mat a = random_mat(3, 4, 1);
    Mat b = random_mat(3, 4, 2);
    Mat positive = random_mat(3, 4, 3, 0.5, 2.0);

    CHECK(fd_max_rel_error({a, b}, [](std::vector<Value>& v) {
              return project(ad::add(v[0], v[1]), 10);
          }) < 1e-6);
    CHECK(fd_max_rel_error({a, b}, [](std::vector<Value>& v) {
              return project(ad::sub(v[0], v[1]), 11);
          }) < 1e-6);
    CHECK(fd_max_rel_error({a}, [](std::vector<Value>& v) {
              return project(ad::neg(v[0]), 12);
          }) < 1e-6);
    CHECK(fd_max_rel_error({a, b}, [](std::vector<Value>& v) {
              return project(ad::cwise_mul(v[0], v[1]), 13);
          }) < 1e-6);
    CHECK(fd_max_rel_error({positive}, [](std::vector<Value>& v) {
              return project(ad::cwise_inv(v[0]), 14);
          }) < 1e-6);
    CHECK(fd_max_rel_error({a}, [](std::vector<Value>& v) {
              return project(ad::exp(v[0]), 15);
          }) < 1e-6);
    CHECK(fd_max_rel_error({a}, [](std::vector<Value>& v) {
              return project(ad::scale(-2.5, v[0]), 16);
          }) < 1e-6);
    CHECK(fd_max_rel_error({a}, [](std::vector<Value>& v) {
              return project(ad::add_const(v[0], 3.0), 17);
          }) < 1e-6);
}

TEST_CASE("finite differences agree for kinked primitives away from kinks") {
    // keep inputs at least 1e-3 from the hinge so the FD step cannot cross it
    Mat a = random_mat(4, 5, 4);
    a = a.unaryExpr([](double v) { return std::abs(v) < 1e-3 ? v + 0.1 : v; });

    CHECK(fd_max_rel_error({a}, [](std::vector<Value>& v) {
              return project(ad::leaky_relu(v[0], 0.2), 20);
          }) < 1e-6);
    CHECK(fd_max_rel_error({a}, [](std::vector<Value>& v) {
              return project(ad::relu(v[0]), 21);
          }) < 1e-6);
    CHECK(fd_max_rel_error({a}, [](std::vector<Value>& v) {
              return project(ad::clamp_min(v[0], 0.25), 22);
          }) < 1e-6);
}

TEST_CASE("finite differences agree for matrix primitives") {
    Mat a = random_mat(3, 4, 5);
    Mat b = random_mat(4, 2, 6);

    CHECK(fd_max_rel_error({a, b}, [](std::vector<Value>& v) {
              return project(ad::matmul(v[0], v[1]), 30);
          }) < 1e-6);
    CHECK(fd_max_rel_error({a}, [](std::vector<Value>& v) {
              return project(ad::transpose(v[0]), 31);
          }) < 1e-6);

    Mat s = random_mat(1, 1, 7, 0.5, 1.5);
    CHECK(fd_max_rel_error({s, a}, [](std::vector<Value>& v) {
              return project(ad::scalar_mul(v[0], v[1]), 32);
          }) < 1e-6);
    CHECK(fd_max_rel_error({s}, [](std::vector<Value>& v) {
              return project(ad::spow(v[0], 1.5), 33);
          }) < 1e-6);
}

TEST_CASE("finite differences agree for the linear solves") {
    // SPD system parameterized symmetrically: A = L + L^T + 5I
    Mat l = random_mat(4, 4, 8);
    Mat rhs = random_mat(4, 3, 9);
    CHECK(fd_max_rel_error({l, rhs}, [](std::vector<Value>& v) {
              Value a = ad::add(ad::add(v[0], ad::transpose(v[0])),
                                Value::constant(5.0 * Mat::Identity(4, 4)));
              return project(ad::solve_spd(a, v[1]), 40);
          }) < 1e-6);

    Mat g = random_mat(4, 4, 10);
    g += 4.0 * Mat::Identity(4, 4);
    CHECK(fd_max_rel_error({g, rhs}, [](std::vector<Value>& v) {
              return project(ad::solve_lu(v[0], v[1]), 41);
          }) < 1e-6);
}

TEST_CASE("finite differences agree for structural primitives") {
    Mat a = random_mat(3, 2, 11);
    Mat b = random_mat(3, 3, 12);
    Mat c = random_mat(2, 2, 13);

    CHECK(fd_max_rel_error({a, b}, [](std::vector<Value>& v) {
              return project(ad::concat_cols({v[0], v[1]}), 50);
          }) < 1e-6);
    CHECK(fd_max_rel_error({a, c}, [](std::vector<Value>& v) {
              return project(ad::concat_rows({v[0], v[1]}), 51);
          }) < 1e-6);
    CHECK(fd_max_rel_error({a}, [](std::vector<Value>& v) {
              return project(ad::gather_rows(v[0], {2, 0, 0, 1}), 52);  // repeats scatter-add
          }) < 1e-6);
    CHECK(fd_max_rel_error({b}, [](std::vector<Value>& v) {
              return project(ad::block_rows(v[0], 1, 2), 53);
          }) < 1e-6);

    Mat col = random_mat(4, 1, 14);
    CHECK(fd_max_rel_error({col}, [](std::vector<Value>& v) {
              return project(ad::diag(v[0]), 54);
          }) < 1e-6);

    Mat row = random_mat(1, 2, 15);
    CHECK(fd_max_rel_error({a, row}, [](std::vector<Value>& v) {
              return project(ad::add_rowvec(v[0], v[1]), 55);
          }) < 1e-6);
    CHECK(fd_max_rel_error({a, row}, [](std::vector<Value>& v) {
              return project(ad::sub_rowvec(v[0], v[1]), 56);
          }) < 1e-6);

    Mat scale_col = random_mat(3, 1, 16, 0.5, 1.5);
    CHECK(fd_max_rel_error({a, scale_col}, [](std::vector<Value>& v) {
              return project(ad::scale_rows(v[0], v[1]), 57);
          }) < 1e-6);

    Mat denom = random_mat(1, 2, 17, 0.5, 1.5);
    CHECK(fd_max_rel_error({a, denom}, [](std::vector<Value>& v) {
              return project(ad::div_colwise(v[0], v[1]), 58);
          }) < 1e-6);
}

TEST_CASE("finite differences agree for reductions") {
    Mat a = random_mat(3, 4, 18);

    CHECK(fd_max_rel_error({a}, [](std::vector<Value>& v) {
              return ad::sum_all(v[0]);
          }) < 1e-6);
    CHECK(fd_max_rel_error({a}, [](std::vector<Value>& v) {
              return project(ad::rowwise_sum(v[0]), 60);
          }) < 1e-6);
    CHECK(fd_max_rel_error({a}, [](std::vector<Value>& v) {
              return project(ad::colwise_sum(v[0]), 61);
          }) < 1e-6);
    CHECK(fd_max_rel_error({a}, [](std::vector<Value>& v) {
              return ad::mean_all(v[0]);
          }) < 1e-6);
}

TEST_CASE("finite differences agree for max-reduce, normalize, and sqdist") {
    Mat edges = random_mat(8, 3, 19);  // 4 groups of 2; seed chosen without near-ties
    CHECK(fd_max_rel_error({edges}, [](std::vector<Value>& v) {
              return project(ad::group_max_rows(v[0], 2), 70);
          }) < 1e-6);

    Mat rows = random_mat(4, 5, 20);
    rows.rowwise() += Eigen::RowVectorXd::Constant(5, 0.8);  // keep norms well above zero
    CHECK(fd_max_rel_error({rows}, [](std::vector<Value>& v) {
              return project(ad::l2_normalize_rows(v[0]), 71);
          }) < 1e-6);

    Mat pa = random_mat(3, 3, 21);
    Mat pb = random_mat(4, 3, 22);
    CHECK(fd_max_rel_error({pa, pb}, [](std::vector<Value>& v) {
              return project(ad::pairwise_sqdist(v[0], v[1]), 72);
          }) < 1e-6);
}

TEST_CASE("shared nodes accumulate gradients once per consumer") {
    Value x = Value::leaf(Mat::Constant(2, 2, 3.0));
    Value y = ad::add(x, x);
    Value loss = ad::sum_all(y);
    ad::backward(loss);
    CHECK(x.grad() == Mat::Constant(2, 2, 2.0));
}

TEST_CASE("max-reduce ties route gradient to the lowest-index argmax") {
    Mat edges(4, 1);
    edges << 2.0, 2.0, 1.0, 5.0;  // group 0 ties at rows 0 and 1
    Value x = Value::leaf(edges);
    Value out = ad::group_max_rows(x, 2);
    ad::backward(ad::sum_all(out));
    Mat g = x.grad();
    CHECK(g(0, 0) == 1.0);
    CHECK(g(1, 0) == 0.0);
    CHECK(g(2, 0) == 0.0);
    CHECK(g(3, 0) == 1.0);
}

TEST_CASE("l2 normalize emits unit rows and solve matches Eigen") {
    Mat rows = random_mat(5, 4, 23);
    rows.array() += 1.0;
    Value out = ad::l2_normalize_rows(Value::constant(rows));
    for (Eigen::Index i = 0; i < out.rows(); ++i)
        CHECK(std::abs(out.val().row(i).norm() - 1.0) < 1e-12);

    Mat l = random_mat(5, 5, 24);
    Mat a = l * l.transpose() + 2.0 * Mat::Identity(5, 5);
    Mat b = random_mat(5, 2, 25);
    Value x = ad::solve_spd(Value::constant(a), Value::constant(b));
    CHECK((a * x.val() - b).cwiseAbs().maxCoeff() < 1e-10);
}
