#include "driftreg/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include <json.hpp>

#include "driftreg/pointcloud.hpp"

namespace driftreg {

namespace {

double uniform01(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
    return lo + (hi - lo) * uniform01(rng);
}

// Box-Muller; keeps generation independent of the standard library's
// unspecified normal_distribution algorithm
double gaussian(std::mt19937_64& rng) {
    double u1 = std::max(uniform01(rng), 1e-300);
    double u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Vec3 gaussian3(std::mt19937_64& rng) {
    double a = gaussian(rng), b = gaussian(rng), c = gaussian(rng);
    return Vec3(a, b, c);
}

Vec3 unit_direction(std::mt19937_64& rng) {
    Vec3 v = gaussian3(rng);
    double n = v.norm();
    while (n < 1e-9) {
        v = gaussian3(rng);
        n = v.norm();
    }
    return v / n;
}

void rescale_to_extent(Points& ps, double extent) {
    Vec3 lo = ps.colwise().minCoeff();
    Vec3 hi = ps.colwise().maxCoeff();
    Vec3 center = 0.5 * (lo + hi);
    double span = (hi - lo).maxCoeff();
    if (span <= 0.0) return;
    double s = extent / span;
    ps = (ps.rowwise() - center) * s;
}

struct Segment {
    Vec3 a, b;
    double length;
};

void grow_tree(std::vector<Segment>& segments, std::mt19937_64& rng, const Vec3& start,
               const Vec3& dir, double length, int depth) {
    if (depth == 0) return;
    Vec3 end = start + dir * length;
    segments.push_back({start, end, length});
    for (int child = 0; child < 2; ++child) {
        Vec3 kick = unit_direction(rng);
        Vec3 ndir = (dir + 0.7 * kick).normalized();
        grow_tree(segments, rng, end, ndir, length * 0.72, depth - 1);
    }
}

Points branching_tree(int n, std::mt19937_64& rng) {
    std::vector<Segment> segments;
    grow_tree(segments, rng, Vec3(0, 0, 0), Vec3(0, 0, 1), 60.0, 6);

    std::vector<double> cumulative(segments.size());
    double total = 0.0;
    for (size_t i = 0; i < segments.size(); ++i) {
        total += segments[i].length;
        cumulative[i] = total;
    }

    Points ps(n, 3);
    for (int i = 0; i < n; ++i) {
        double pick = uniform01(rng) * total;
        size_t si = static_cast<size_t>(
            std::lower_bound(cumulative.begin(), cumulative.end(), pick) - cumulative.begin());
        if (si >= segments.size()) si = segments.size() - 1;
        const Segment& seg = segments[si];
        double t = uniform01(rng);
        Vec3 p = seg.a + t * (seg.b - seg.a) + 1.5 * gaussian3(rng);
        ps.row(i) = p;
    }
    rescale_to_extent(ps, kShapeExtentMm);
    return ps;
}

Points grid_shape(int n) {
    int side = 2;
    while (side * side * side < n) ++side;
    double spacing = kShapeExtentMm / static_cast<double>(side - 1);
    Points ps(n, 3);
    int at = 0;
    for (int i = 0; i < side && at < n; ++i)
        for (int j = 0; j < side && at < n; ++j)
            for (int k = 0; k < side && at < n; ++k) {
                if (at >= n) break;
                ps.row(at++) = Vec3(i * spacing, j * spacing, k * spacing);
            }
    return ps;
}

Points sphere_shell(int n, std::mt19937_64& rng) {
    Points ps(n, 3);
    for (int i = 0; i < n; ++i) {
        double r = kSphereRadiusMm + uniform(rng, -kSphereJitterMm, kSphereJitterMm);
        ps.row(i) = unit_direction(rng) * r;
    }
    return ps;
}

}  // namespace

ShapeKind shape_kind_from_string(const std::string& name) {
    if (name == "branching_tree") return ShapeKind::BranchingTree;
    if (name == "grid") return ShapeKind::Grid;
    if (name == "sphere_shell") return ShapeKind::SphereShell;
    throw std::invalid_argument("unknown shape kind: " + name);
}

std::string to_string(ShapeKind kind) {
    switch (kind) {
        case ShapeKind::BranchingTree: return "branching_tree";
        case ShapeKind::Grid: return "grid";
        case ShapeKind::SphereShell: return "sphere_shell";
    }
    return "?";
}

Points gen_shape(ShapeKind kind, int n, std::uint64_t seed) {
    require(n >= 16, "gen_shape: n must be >= 16");
    std::mt19937_64 rng(seed);
    switch (kind) {
        case ShapeKind::BranchingTree: return branching_tree(n, rng);
        case ShapeKind::Grid: return grid_shape(n);
        case ShapeKind::SphereShell: return sphere_shell(n, rng);
    }
    throw std::invalid_argument("gen_shape: unknown kind");
}

Points apply_deformation(const Points& ps, const DeformationSpec& spec) {
    require(spec.width > 0.0, "apply_deformation: width must be > 0");
    require(spec.centers.rows() == spec.amplitudes.rows(),
            "apply_deformation: centers/amplitudes mismatch");
    Points out(ps.rows(), 3);
    const double denom = 2.0 * spec.width * spec.width;
    for (Eigen::Index i = 0; i < ps.rows(); ++i) {
        Vec3 p = ps.row(i);
        Vec3 q = (spec.affine * p.transpose()).transpose() + spec.translation;
        for (Eigen::Index j = 0; j < spec.centers.rows(); ++j) {
            double d2 = (p - spec.centers.row(j)).squaredNorm();
            q += spec.amplitudes.row(j) * std::exp(-d2 / denom);
        }
        out.row(i) = q;
    }
    return out;
}

DeformationSpec random_deformation(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    DeformationSpec spec;
    const int centers = 6;
    spec.centers.resize(centers, 3);
    spec.amplitudes.resize(centers, 3);
    const double half = kShapeExtentMm / 2.0;
    for (int j = 0; j < centers; ++j) {
        spec.centers.row(j) =
            Vec3(uniform(rng, -half, half), uniform(rng, -half, half), uniform(rng, -half, half));
        spec.amplitudes.row(j) = unit_direction(rng) * uniform(rng, 8.0, 16.0);
    }
    spec.width = uniform(rng, 45.0, 75.0);
    Eigen::Matrix3d da;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) da(r, c) = uniform(rng, -0.04, 0.04);
    spec.affine = Eigen::Matrix3d::Identity() + da;
    spec.translation = Vec3(uniform(rng, -4.0, 4.0), uniform(rng, -4.0, 4.0), uniform(rng, -4.0, 4.0));
    return spec;
}

DeformationSpec scale_deformation(const DeformationSpec& base, double factor) {
    DeformationSpec spec = base;
    spec.amplitudes = base.amplitudes * factor;
    spec.affine =
        Eigen::Matrix3d::Identity() + factor * (base.affine - Eigen::Matrix3d::Identity());
    spec.translation = base.translation * factor;
    return spec;
}

namespace {

double mean_pair_distance(const Points& a, const Points& b) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < a.rows(); ++i) total += (a.row(i) - b.row(i)).norm();
    return total / static_cast<double>(a.rows());
}

}  // namespace

RegistrationCase make_case(const MakeCaseConfig& cfg) {
    require(cfg.outlier_frac >= 0.0 && cfg.outlier_frac < 1.0,
            "make_case: outlier_frac must be in [0, 1)");
    require(cfg.noise_sigma >= 0.0, "make_case: noise_sigma must be >= 0");
    require(cfg.supervision_count >= 0 && cfg.eval_count >= 1, "make_case: bad landmark counts");
    const int n = cfg.n;
    const int n_outliers = static_cast<int>(std::llround(cfg.outlier_frac * n));
    require(cfg.supervision_count + cfg.eval_count <= n - n_outliers,
            "make_case: supervision + eval exceeds the non-outlier point budget");

    RegistrationCase c;
    c.config = cfg;
    c.moving = gen_shape(cfg.kind, n, cfg.seed);

    std::mt19937_64 rng(cfg.seed ^ 0xd1b54a32d192ed03ull);

    // fixed noise and outlier draws, reused across calibration evaluations
    Points noise = Points::Zero(n, 3);
    if (cfg.noise_sigma > 0.0)
        for (int i = 0; i < n; ++i) noise.row(i) = cfg.noise_sigma * gaussian3(rng);

    std::vector<int> order(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<int> outlier_idx(order.begin(), order.begin() + n_outliers);

    c.outlier.assign(static_cast<size_t>(n), false);
    for (int i : outlier_idx) c.outlier[static_cast<size_t>(i)] = true;

    std::vector<int> landmarks;
    for (int i : order)
        if (!c.outlier[static_cast<size_t>(i)]) landmarks.push_back(i);
    std::vector<int> sup_idx(landmarks.begin(), landmarks.begin() + cfg.supervision_count);
    std::vector<int> eval_idx(landmarks.begin() + cfg.supervision_count,
                              landmarks.begin() + cfg.supervision_count + cfg.eval_count);

    DeformationSpec base = random_deformation(cfg.deform_seed);

    auto build_fixed = [&](double factor, Points& fixed_out) {
        DeformationSpec spec = scale_deformation(base, factor);
        fixed_out = apply_deformation(c.moving, spec) + noise;
    };
    auto eval_tre = [&](double factor) {
        Points fixed_try;
        build_fixed(factor, fixed_try);
        double total = 0.0;
        for (int i : eval_idx) total += (fixed_try.row(i) - c.moving.row(i)).norm();
        return total / static_cast<double>(eval_idx.size());
    };

    double factor = 0.0;
    if (cfg.target_initial_tre > 0.0) {
        // mean initial TRE grows monotonically with the deformation scale;
        // expand then bisect
        double hi = 1.0;
        while (eval_tre(hi) < cfg.target_initial_tre && hi < 64.0) hi *= 2.0;
        double lo = 0.0;
        for (int it = 0; it < 60; ++it) {
            double mid = 0.5 * (lo + hi);
            if (eval_tre(mid) < cfg.target_initial_tre)
                lo = mid;
            else
                hi = mid;
        }
        factor = 0.5 * (lo + hi);
    }
    c.deformation_scale = factor;
    build_fixed(factor, c.fixed);

    // replace outlier rows of the fixed set with uniform bounding-box samples
    if (n_outliers > 0) {
        Vec3 lo = c.fixed.colwise().minCoeff();
        Vec3 hi = c.fixed.colwise().maxCoeff();
        std::mt19937_64 orng(cfg.seed ^ 0x94d049bb133111ebull);
        for (int i : outlier_idx)
            c.fixed.row(i) = Vec3(uniform(orng, lo(0), hi(0)), uniform(orng, lo(1), hi(1)),
                                  uniform(orng, lo(2), hi(2)));
    }

    c.ground_truth.assign(static_cast<size_t>(n), -1);
    for (int i = 0; i < n; ++i)
        if (!c.outlier[static_cast<size_t>(i)]) c.ground_truth[static_cast<size_t>(i)] = i;

    auto pairs_from = [&](const std::vector<int>& idx) {
        LandmarkPairs lp;
        lp.fixed.resize(static_cast<Eigen::Index>(idx.size()), 3);
        lp.corresponding.resize(static_cast<Eigen::Index>(idx.size()), 3);
        for (size_t i = 0; i < idx.size(); ++i) {
            lp.fixed.row(static_cast<Eigen::Index>(i)) = c.fixed.row(idx[i]);
            lp.corresponding.row(static_cast<Eigen::Index>(i)) = c.moving.row(idx[i]);
        }
        return lp;
    };
    c.supervision = pairs_from(sup_idx);
    c.eval_landmarks = pairs_from(eval_idx);
    c.initial_tre = mean_pair_distance(c.eval_landmarks.fixed, c.eval_landmarks.corresponding);
    return c;
}

namespace {

void save_pairs_csv(const LandmarkPairs& lp, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError(IoErrorKind::WriteFailure, "cannot write " + path.string());
    char buf[220];
    for (Eigen::Index i = 0; i < lp.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g", lp.fixed(i, 0),
                      lp.fixed(i, 1), lp.fixed(i, 2), lp.corresponding(i, 0),
                      lp.corresponding(i, 1), lp.corresponding(i, 2));
        out << buf << '\n';
    }
}

LandmarkPairs load_pairs_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError(IoErrorKind::MissingFile, "no such file: " + path.string());
    std::vector<std::array<double, 6>> rows;
    std::string line;
    long lineno = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        ++lineno;
        std::array<double, 6> v{};
        std::stringstream ss(line);
        std::string field;
        int i = 0;
        while (std::getline(ss, field, ',') && i < 6) v[static_cast<size_t>(i++)] = std::stod(field);
        if (i != 6)
            throw IoError(IoErrorKind::MalformedRow,
                          "expected 6 columns at line " + std::to_string(lineno), lineno);
        rows.push_back(v);
    }
    if (rows.empty()) throw IoError(IoErrorKind::EmptyInput, "no landmark pairs in " + path.string());
    LandmarkPairs lp;
    lp.fixed.resize(static_cast<Eigen::Index>(rows.size()), 3);
    lp.corresponding.resize(static_cast<Eigen::Index>(rows.size()), 3);
    for (size_t i = 0; i < rows.size(); ++i) {
        lp.fixed.row(static_cast<Eigen::Index>(i)) = Vec3(rows[i][0], rows[i][1], rows[i][2]);
        lp.corresponding.row(static_cast<Eigen::Index>(i)) = Vec3(rows[i][3], rows[i][4], rows[i][5]);
    }
    return lp;
}

}  // namespace

void save_case(const RegistrationCase& c, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    save_pointset(c.fixed, dir / "fixed.csv", PointFormat::Csv);
    save_pointset(c.moving, dir / "moving.csv", PointFormat::Csv);
    save_pairs_csv(c.supervision, dir / "supervision.csv");
    save_pairs_csv(c.eval_landmarks, dir / "eval.csv");

    nlohmann::json meta;
    meta["kind"] = to_string(c.config.kind);
    meta["n"] = c.config.n;
    meta["seed"] = c.config.seed;
    meta["deform_seed"] = c.config.deform_seed;
    meta["noise_sigma"] = c.config.noise_sigma;
    meta["outlier_frac"] = c.config.outlier_frac;
    meta["supervision_count"] = c.config.supervision_count;
    meta["eval_count"] = c.config.eval_count;
    meta["target_initial_tre"] = c.config.target_initial_tre;
    meta["initial_tre"] = c.initial_tre;
    meta["deformation_scale"] = c.deformation_scale;
    std::ofstream out(dir / "meta.json");
    if (!out) throw IoError(IoErrorKind::WriteFailure, "cannot write meta.json");
    out << meta.dump(2) << '\n';
}

RegistrationCase load_case(const std::filesystem::path& dir) {
    RegistrationCase c;
    c.fixed = load_pointset(dir / "fixed.csv", PointFormat::Csv);
    c.moving = load_pointset(dir / "moving.csv", PointFormat::Csv);
    c.supervision = load_pairs_csv(dir / "supervision.csv");
    c.eval_landmarks = load_pairs_csv(dir / "eval.csv");

    std::ifstream in(dir / "meta.json");
    if (in) {
        nlohmann::json meta = nlohmann::json::parse(in, nullptr, false);
        if (!meta.is_discarded()) {
            c.initial_tre = meta.value("initial_tre", 0.0);
            c.deformation_scale = meta.value("deformation_scale", 1.0);
            c.config.n = meta.value("n", static_cast<int>(c.moving.rows()));
            c.config.seed = meta.value("seed", 0ull);
            c.config.deform_seed = meta.value("deform_seed", 0ull);
            c.config.noise_sigma = meta.value("noise_sigma", 0.0);
            c.config.outlier_frac = meta.value("outlier_frac", 0.0);
            c.config.supervision_count = meta.value("supervision_count",
                                                    static_cast<int>(c.supervision.size()));
            c.config.eval_count = meta.value("eval_count",
                                             static_cast<int>(c.eval_landmarks.size()));
            c.config.target_initial_tre = meta.value("target_initial_tre", 0.0);
            if (meta.contains("kind"))
                c.config.kind = shape_kind_from_string(meta["kind"].get<std::string>());
        }
    }
    if (c.initial_tre == 0.0)
        c.initial_tre = mean_pair_distance(c.eval_landmarks.fixed, c.eval_landmarks.corresponding);
    return c;
}

}  // namespace driftreg
