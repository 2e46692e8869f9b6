#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "driftreg/eval.hpp"

using namespace driftreg;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& path) {
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<double> random_sample(int n, std::uint64_t seed, double shift = 0.0) {
    std::mt19937_64 rng(seed);
    std::vector<double> v(static_cast<size_t>(n));
    for (auto& x : v) x = shift + static_cast<double>(rng() >> 11) * 0x1.0p-53;
    return v;
}

// reference p-value by explicit enumeration of all assignments
double enumerate_rank_sum_p(std::vector<double> a, std::vector<double> b) {
    std::vector<double> pooled = a;
    pooled.insert(pooled.end(), b.begin(), b.end());
    const size_t n = pooled.size(), na = a.size();

    auto rank_sum_of = [&](const std::vector<bool>& mask) {
        // average ranks over the pooled multiset
        double sum = 0.0;
        for (size_t i = 0; i < n; ++i) {
            if (!mask[i]) continue;
            double less = 0.0, equal = 0.0;
            for (size_t j = 0; j < n; ++j) {
                if (pooled[j] < pooled[i]) ++less;
                if (pooled[j] == pooled[i]) ++equal;
            }
            sum += less + (equal + 1.0) / 2.0;
        }
        return sum;
    };

    std::vector<bool> observed(n, false);
    for (size_t i = 0; i < na; ++i) observed[i] = true;
    double expected = static_cast<double>(na) * (static_cast<double>(n) + 1.0) / 2.0;
    double obs_dev = std::abs(rank_sum_of(observed) - expected);

    std::vector<bool> mask(n, false);
    std::fill(mask.begin(), mask.begin() + static_cast<long>(na), true);
    std::sort(mask.begin(), mask.end());
    long long total = 0, tail = 0;
    do {
        ++total;
        if (std::abs(rank_sum_of(mask) - expected) >= obs_dev - 1e-9) ++tail;
    } while (std::next_permutation(mask.begin(), mask.end()));
    return static_cast<double>(tail) / static_cast<double>(total);
}

}  // namespace

TEST_CASE("tre statistics") {
    LandmarkPairs pairs;
    pairs.fixed.resize(3, 3);
    pairs.corresponding.resize(3, 3);
    pairs.fixed << 0, 0, 0, 1, 1, 1, 2, 2, 2;
    pairs.corresponding = pairs.fixed;

    SUBCASE("perfect displacements give zero error") {
        TreStats s = target_registration_error(pairs, Mat::Zero(3, 3));
        CHECK(s.mean == 0.0);
        CHECK(s.stddev == 0.0);
        CHECK(s.count == 3);
    }
    SUBCASE("constant offset gives its norm") {
        LandmarkPairs off = pairs;
        off.fixed.col(0).array() += 3.0;
        off.fixed.col(1).array() += 4.0;
        TreStats s = target_registration_error(off, Mat::Zero(3, 3));
        CHECK(s.mean == doctest::Approx(5.0).epsilon(1e-12));
        CHECK(s.stddev == doctest::Approx(0.0));
    }
    SUBCASE("stats are recomputable from the error list") {
        Mat disp(3, 3);
        disp << 1, 0, 0, 0, 2, 0, 0, 0, 4;
        TreStats s = target_registration_error(pairs, disp);
        double mean = (s.errors[0] + s.errors[1] + s.errors[2]) / 3.0;
        CHECK(std::abs(mean - s.mean) < 1e-12);
        double var = 0.0;
        for (double e : s.errors) var += (e - mean) * (e - mean);
        CHECK(std::abs(std::sqrt(var / 3.0) - s.stddev) < 1e-12);
    }
    SUBCASE("identity displacement TRE equals the mean pair distance") {
        LandmarkPairs rnd;
        rnd.fixed = Mat::Random(20, 3) * 10.0;
        rnd.corresponding = Mat::Random(20, 3) * 10.0;
        TreStats s = target_registration_error(rnd, Mat::Zero(20, 3));
        double direct = 0.0;
        for (int i = 0; i < 20; ++i)
            direct += (rnd.fixed.row(i) - rnd.corresponding.row(i)).norm();
        CHECK(s.mean == doctest::Approx(direct / 20.0).epsilon(1e-12));
    }
    SUBCASE("length mismatch") {
        CHECK_THROWS_AS(target_registration_error(pairs, Mat::Zero(2, 3)),
                        std::invalid_argument);
    }
}

TEST_CASE("rank sum exact values") {
    CHECK(rank_sum_test({1, 2, 3}, {1, 2, 3}) == 1.0);
    CHECK(rank_sum_test({1, 2, 3}, {4, 5, 6}) == doctest::Approx(0.1).epsilon(1e-12));
    CHECK_THROWS_AS(rank_sum_test({}, {1.0}), std::invalid_argument);
}

TEST_CASE("rank sum is symmetric and matches full enumeration up to n,m = 6") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 30; ++trial) {
        int n = 2 + static_cast<int>(rng() % 5);
        int m = 2 + static_cast<int>(rng() % 5);
        std::vector<double> a(static_cast<size_t>(n)), b(static_cast<size_t>(m));
        // draw from a small integer grid so ties actually occur
        for (auto& x : a) x = static_cast<double>(rng() % 7);
        for (auto& x : b) x = static_cast<double>(rng() % 7);

        double p = rank_sum_test(a, b);
        CHECK(p == rank_sum_test(b, a));
        CHECK(p == doctest::Approx(enumerate_rank_sum_p(a, b)).epsilon(1e-9));
        CHECK(p > 0.0);
        CHECK(p <= 1.0);
    }
}

TEST_CASE("rank sum approximation flags large shifts") {
    auto a = random_sample(1500, 7);
    auto b = random_sample(1500, 8, 10.0);  // shift far above the spread
    CHECK(rank_sum_test(a, b) < 1e-4);
}

TEST_CASE("rank sum exact and approximate paths agree near the switchover") {
    for (std::uint64_t seed = 0; seed < 12; ++seed) {
        for (int m : {8, 9, 16, 40}) {
            auto a = random_sample(8 + static_cast<int>(seed % 2), 300 + seed);
            auto b = random_sample(m, 400 + seed, 0.15);
            double exact = detail::rank_sum_exact(a, b);
            double approx = detail::rank_sum_normal_approx(a, b);
            CHECK(std::abs(exact - approx) < 0.02);
        }
    }
}

TEST_CASE("emit_report writes a stable csv and svg") {
    auto dir = fs::temp_directory_path() / "driftreg_tests" / "report";
    fs::remove_all(dir);

    SUBCASE("single result gives header plus one row") {
        TreStats s = tre_stats_from_errors({1.0, 2.0, 3.0});
        emit_report({{"case0", "cpd", s}}, dir);
        std::string csv = slurp(dir / "results.csv");
        CHECK(csv == "case,method,mean,std,count\ncase0,cpd,2.000000,0.816497,3\n");
    }

    SUBCASE("row order follows the input and repeated runs are byte-identical") {
        std::vector<MethodResult> rows = {
            {"c1", "initial", tre_stats_from_errors({23.0, 24.0})},
            {"c1", "knn", tre_stats_from_errors({9.0, 9.5})},
            {"c1", "cpd", tre_stats_from_errors({6.4, 6.2})},
            {"c1", "feat-cpd", tre_stats_from_errors({4.7, 4.5})},
        };
        emit_report(rows, dir);
        std::string csv1 = slurp(dir / "results.csv");
        std::string svg1 = slurp(dir / "mean_tre.svg");
        std::vector<std::string> order = {"initial", "knn", "cpd", "feat-cpd"};
        size_t at = 0;
        std::istringstream lines(csv1);
        std::string line;
        std::getline(lines, line);  // header
        while (std::getline(lines, line) && at < order.size()) {
            CHECK(line.find("," + order[at] + ",") != std::string::npos);
            ++at;
        }
        CHECK(at == order.size());

        emit_report(rows, dir);
        CHECK(slurp(dir / "results.csv") == csv1);
        CHECK(slurp(dir / "mean_tre.svg") == svg1);
        CHECK(svg1.find("<svg") != std::string::npos);
    }
}
