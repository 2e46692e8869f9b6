#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "driftreg/types.hpp"

namespace driftreg {

struct TreStats {
    std::vector<double> errors;  // mm, one per landmark
    double mean = 0.0;
    double stddev = 0.0;  // population
    int count = 0;
};

TreStats tre_stats_from_errors(std::vector<double> errors);

// error_i = |fixed_i - (moving_i + d_i)|
TreStats target_registration_error(const LandmarkPairs& pairs, const Mat& displacements);

// Two-sided Wilcoxon-Mann-Whitney p-value with average ranks for ties.
// Exact (DP over the rank-sum distribution) when min(n, m) <= 8, normal
// approximation with tie and continuity correction otherwise.
double rank_sum_test(const std::vector<double>& errors_a, const std::vector<double>& errors_b);

namespace detail {
// both paths on arbitrary sizes, for cross-checking near the switchover
double rank_sum_exact(const std::vector<double>& a, const std::vector<double>& b);
double rank_sum_normal_approx(const std::vector<double>& a, const std::vector<double>& b);
}  // namespace detail

struct MethodResult {
    std::string case_id;
    std::string method;
    TreStats stats;
};

// Writes results.csv (case, method, mean, std, count) and a deterministic
// SVG bar plot of per-method mean TRE. Byte-stable for identical inputs.
void emit_report(const std::vector<MethodResult>& results, const std::filesystem::path& out_dir);

}  // namespace driftreg
