#include "driftreg/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>

namespace driftreg {

TreStats tre_stats_from_errors(std::vector<double> errors) {
    require(!errors.empty(), "tre_stats: empty error list");
    TreStats s;
    s.count = static_cast<int>(errors.size());
    s.mean = std::accumulate(errors.begin(), errors.end(), 0.0) / s.count;
    double var = 0.0;
    for (double e : errors) var += (e - s.mean) * (e - s.mean);
    s.stddev = std::sqrt(var / s.count);
    s.errors = std::move(errors);
    return s;
}

TreStats target_registration_error(const LandmarkPairs& pairs, const Mat& displacements) {
    require(displacements.rows() == pairs.size() && displacements.cols() == 3,
            "target_registration_error: displacement rows must align with pairs");
    std::vector<double> errors(static_cast<size_t>(pairs.size()));
    for (Eigen::Index i = 0; i < pairs.size(); ++i)
        errors[static_cast<size_t>(i)] =
            (pairs.fixed.row(i) - (pairs.corresponding.row(i) + displacements.row(i))).norm();
    return tre_stats_from_errors(std::move(errors));
}

namespace {

// average ranks of the pooled sample, doubled so they are exact integers
std::vector<long long> doubled_ranks(const std::vector<double>& pooled_sorted) {
    const size_t n = pooled_sorted.size();
    std::vector<long long> r2(n);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && pooled_sorted[j + 1] == pooled_sorted[i]) ++j;
        // ranks i+1 .. j+1 share the average ((i+1)+(j+1))/2; doubled: i+j+2
        long long shared = static_cast<long long>(i) + static_cast<long long>(j) + 2;
        for (size_t t = i; t <= j; ++t) r2[t] = shared;
        i = j + 1;
    }
    return r2;
}

double normal_sf(double z) {
    return 0.5 * std::erfc(z / std::numbers::sqrt2);
}

double exact_rank_sum_p(const std::vector<double>& small_sample,
                        const std::vector<double>& large_sample) {
    std::vector<double> pooled = small_sample;
    pooled.insert(pooled.end(), large_sample.begin(), large_sample.end());
    const size_t ns = small_sample.size();
    const size_t n = pooled.size();

    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return pooled[a] < pooled[b]; });
    std::vector<double> sorted(n);
    for (size_t i = 0; i < n; ++i) sorted[i] = pooled[order[i]];
    std::vector<long long> r2_sorted = doubled_ranks(sorted);
    std::vector<long long> r2(n);
    for (size_t i = 0; i < n; ++i) r2[order[i]] = r2_sorted[i];

    long long observed = 0;
    for (size_t i = 0; i < ns; ++i) observed += r2[i];
    // doubled expected rank sum of the small sample
    long long expected = static_cast<long long>(ns) * static_cast<long long>(n + 1);
    long long dev = std::llabs(observed - expected);

    // ways[j][s] = number of ns-subsets of the first items with doubled rank
    // sum s (counts held in doubles; only the final ratio matters)
    long long max_sum = 0;
    std::vector<long long> r2_desc = r2;
    std::sort(r2_desc.begin(), r2_desc.end(), std::greater<>());
    for (size_t i = 0; i < ns; ++i) max_sum += r2_desc[i];

    std::vector<std::vector<double>> ways(
        ns + 1, std::vector<double>(static_cast<size_t>(max_sum + 1), 0.0));
    ways[0][0] = 1.0;
    for (size_t item = 0; item < n; ++item) {
        long long w = r2[item];
        size_t jmax = std::min(item + 1, ns);
        for (size_t j = jmax; j >= 1; --j) {
            auto& dst = ways[j];
            const auto& src = ways[j - 1];
            for (long long s = max_sum; s >= w; --s)
                if (src[static_cast<size_t>(s - w)] != 0.0)
                    dst[static_cast<size_t>(s)] += src[static_cast<size_t>(s - w)];
        }
    }

    double total = 0.0, tail = 0.0;
    for (long long s = 0; s <= max_sum; ++s) {
        double c = ways[ns][static_cast<size_t>(s)];
        if (c == 0.0) continue;
        total += c;
        if (std::llabs(s - expected) >= dev) tail += c;
    }
    return tail / total;
}

double approx_rank_sum_p(const std::vector<double>& a, const std::vector<double>& b) {
    std::vector<double> pooled = a;
    pooled.insert(pooled.end(), b.begin(), b.end());
    const size_t n = pooled.size();
    const double na = static_cast<double>(a.size());
    const double nb = static_cast<double>(b.size());

    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(),
              [&](size_t x, size_t y) { return pooled[x] < pooled[y]; });
    std::vector<double> sorted(n);
    for (size_t i = 0; i < n; ++i) sorted[i] = pooled[order[i]];
    std::vector<long long> r2_sorted = doubled_ranks(sorted);
    std::vector<long long> r2(n);
    for (size_t i = 0; i < n; ++i) r2[order[i]] = r2_sorted[i];

    double rank_sum_a = 0.0;
    for (size_t i = 0; i < a.size(); ++i) rank_sum_a += 0.5 * static_cast<double>(r2[i]);
    double u = rank_sum_a - na * (na + 1.0) / 2.0;
    double mu = na * nb / 2.0;

    // tie correction
    double tie_term = 0.0;
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && sorted[j + 1] == sorted[i]) ++j;
        double t = static_cast<double>(j - i + 1);
        tie_term += t * t * t - t;
        i = j + 1;
    }
    double nn = static_cast<double>(n);
    double var = na * nb / 12.0 * ((nn + 1.0) - tie_term / (nn * (nn - 1.0)));
    if (var <= 0.0) return 1.0;  // all observations tied

    double diff = u - mu;
    double cc = diff > 0.0 ? -0.5 : (diff < 0.0 ? 0.5 : 0.0);  // continuity correction
    double z = (diff + cc) / std::sqrt(var);
    double p = 2.0 * normal_sf(std::abs(z));
    return std::min(1.0, std::max(p, std::numeric_limits<double>::min()));
}

}  // namespace

namespace detail {

double rank_sum_exact(const std::vector<double>& a, const std::vector<double>& b) {
    return a.size() <= b.size() ? exact_rank_sum_p(a, b) : exact_rank_sum_p(b, a);
}

double rank_sum_normal_approx(const std::vector<double>& a, const std::vector<double>& b) {
    return approx_rank_sum_p(a, b);
}

}  // namespace detail

double rank_sum_test(const std::vector<double>& errors_a, const std::vector<double>& errors_b) {
    require(!errors_a.empty() && !errors_b.empty(), "rank_sum_test: empty sample");
    if (std::min(errors_a.size(), errors_b.size()) <= 8)
        return detail::rank_sum_exact(errors_a, errors_b);
    return approx_rank_sum_p(errors_a, errors_b);
}

namespace {

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

}  // namespace

void emit_report(const std::vector<MethodResult>& results, const std::filesystem::path& out_dir) {
    require(!results.empty(), "emit_report: no results");
    std::filesystem::create_directories(out_dir);

    {
        std::ofstream csv(out_dir / "results.csv");
        if (!csv) throw IoError(IoErrorKind::WriteFailure, "cannot write results.csv");
        csv << "case,method,mean,std,count\n";  // std is the population std
        for (const auto& r : results)
            csv << r.case_id << ',' << r.method << ',' << fmt(r.stats.mean) << ','
                << fmt(r.stats.stddev) << ',' << r.stats.count << '\n';
    }

    // per-method mean TRE, first-appearance order
    std::vector<std::string> methods;
    std::map<std::string, std::pair<double, int>> totals;
    for (const auto& r : results) {
        if (!totals.count(r.method)) methods.push_back(r.method);
        auto& t = totals[r.method];
        t.first += r.stats.mean;
        t.second += 1;
    }

    const int bar_w = 64, gap = 24, left = 60, bottom = 40, top = 20, plot_h = 220;
    const int width = left + static_cast<int>(methods.size()) * (bar_w + gap) + gap;
    const int height = top + plot_h + bottom;
    double max_mean = 1e-9;
    for (const auto& m : methods)
        max_mean = std::max(max_mean, totals[m].first / totals[m].second);

    std::ofstream svg(out_dir / "mean_tre.svg");
    if (!svg) throw IoError(IoErrorKind::WriteFailure, "cannot write mean_tre.svg");
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << width
        << "\" height=\"" << height << "\">\n";
    svg << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
    svg << "<text x=\"8\" y=\"16\" font-family=\"monospace\" font-size=\"12\">mean TRE (mm)</text>\n";
    for (size_t i = 0; i < methods.size(); ++i) {
        double mean = totals[methods[i]].first / totals[methods[i]].second;
        int h = static_cast<int>(std::lround(plot_h * mean / max_mean));
        int x = left + static_cast<int>(i) * (bar_w + gap);
        int y = top + plot_h - h;
        svg << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << bar_w << "\" height=\"" << h
            << "\" fill=\"#4878a8\"/>\n";
        svg << "<text x=\"" << x << "\" y=\"" << (y - 4)
            << "\" font-family=\"monospace\" font-size=\"11\">" << fmt(mean) << "</text>\n";
        svg << "<text x=\"" << x << "\" y=\"" << (top + plot_h + 16)
            << "\" font-family=\"monospace\" font-size=\"11\">" << methods[i] << "</text>\n";
    }
    svg << "</svg>\n";
}

}  // namespace driftreg
