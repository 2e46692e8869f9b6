#include "driftreg/pointcloud.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

namespace driftreg {

namespace {

std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

bool parse_row(const std::string& line, double out[3]) {
    std::stringstream ss(line);
    std::string field;
    int i = 0;
    while (std::getline(ss, field, ',')) {
        if (i >= 3) return false;
        field = trim(field);
        if (field.empty()) return false;
        char* end = nullptr;
        out[i] = std::strtod(field.c_str(), &end);
        if (end == field.c_str() || *end != '\0') return false;
        ++i;
    }
    return i == 3;
}

Points rows_to_points(const std::vector<Eigen::RowVector3d>& rows) {
    Points ps(static_cast<Eigen::Index>(rows.size()), 3);
    for (Eigen::Index i = 0; i < ps.rows(); ++i) ps.row(i) = rows[static_cast<size_t>(i)];
    return ps;
}

Points load_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    std::vector<Eigen::RowVector3d> rows;
    std::string line;
    long data_line = 0;
    bool first = true;
    while (std::getline(in, line)) {
        std::string t = trim(line);
        if (t.empty()) continue;
        if (first) {
            first = false;
            std::string lower = t;
            std::transform(lower.begin(), lower.end(), lower.begin(),
                           [](unsigned char c) { return std::tolower(c); });
            lower.erase(std::remove_if(lower.begin(), lower.end(),
                                       [](unsigned char c) { return std::isspace(c); }),
                        lower.end());
            if (lower == "x,y,z") continue;
        }
        ++data_line;
        double v[3];
        if (!parse_row(t, v))
            throw IoError(IoErrorKind::MalformedRow,
                          "malformed CSV row at data line " + std::to_string(data_line) + ": '" + t + "'",
                          data_line);
        if (!std::isfinite(v[0]) || !std::isfinite(v[1]) || !std::isfinite(v[2]))
            throw IoError(IoErrorKind::NonFinite,
                          "non-finite coordinate at data line " + std::to_string(data_line), data_line);
        rows.emplace_back(v[0], v[1], v[2]);
    }
    if (rows.empty()) throw IoError(IoErrorKind::EmptyInput, "no points in " + path.string());
    return rows_to_points(rows);
}

Points load_ply(const std::filesystem::path& path) {
    std::ifstream in(path);
    std::string line;
    if (!std::getline(in, line) || trim(line) != "ply")
        throw IoError(IoErrorKind::BadFormat, "missing 'ply' magic in " + path.string());
    long vertex_count = -1;
    bool ascii = false;
    long header_line = 1;
    while (std::getline(in, line)) {
        ++header_line;
        std::string t = trim(line);
        if (t == "end_header") break;
        std::stringstream ss(t);
        std::string tok;
        ss >> tok;
        if (tok == "format") {
            std::string kind;
            ss >> kind;
            ascii = (kind == "ascii");
        } else if (tok == "element") {
            std::string name;
            long count = 0;
            ss >> name >> count;
            if (name == "vertex") vertex_count = count;
            else if (vertex_count >= 0)
                throw IoError(IoErrorKind::BadFormat, "unsupported PLY element '" + name + "'");
        }
        if (in.eof())
            throw IoError(IoErrorKind::BadFormat, "unterminated PLY header in " + path.string());
    }
    if (!ascii) throw IoError(IoErrorKind::BadFormat, "only ASCII PLY is supported");
    if (vertex_count < 0) throw IoError(IoErrorKind::BadFormat, "PLY header lacks 'element vertex'");
    if (vertex_count == 0) throw IoError(IoErrorKind::EmptyInput, "no vertices in " + path.string());

    std::vector<Eigen::RowVector3d> rows;
    rows.reserve(static_cast<size_t>(vertex_count));
    long data_line = 0;
    while (std::getline(in, line) && data_line < vertex_count) {
        std::string t = trim(line);
        if (t.empty()) continue;
        ++data_line;
        std::stringstream ss(t);
        double v[3];
        if (!(ss >> v[0] >> v[1] >> v[2]))
            throw IoError(IoErrorKind::MalformedRow,
                          "malformed PLY vertex at data line " + std::to_string(data_line), data_line);
        if (!std::isfinite(v[0]) || !std::isfinite(v[1]) || !std::isfinite(v[2]))
            throw IoError(IoErrorKind::NonFinite,
                          "non-finite vertex at data line " + std::to_string(data_line), data_line);
        rows.emplace_back(v[0], v[1], v[2]);
    }
    if (static_cast<long>(rows.size()) != vertex_count)
        throw IoError(IoErrorKind::MalformedRow,
                      "PLY vertex count mismatch: header says " + std::to_string(vertex_count) +
                          ", file has " + std::to_string(rows.size()));
    return rows_to_points(rows);
}

void format_coord(std::ostream& os, double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    os << buf;
}

}  // namespace

Points load_pointset(const std::filesystem::path& path, PointFormat format) {
    if (!std::filesystem::exists(path))
        throw IoError(IoErrorKind::MissingFile, "no such file: " + path.string());
    return format == PointFormat::Csv ? load_csv(path) : load_ply(path);
}

void save_pointset(const Points& ps, const std::filesystem::path& path, PointFormat format) {
    require(ps.rows() >= 1, "cannot save an empty point set");
    std::ofstream out(path);
    if (!out) throw IoError(IoErrorKind::WriteFailure, "cannot open for writing: " + path.string());
    if (format == PointFormat::Ply) {
        out << "ply\nformat ascii 1.0\nelement vertex " << ps.rows()
            << "\nproperty float x\nproperty float y\nproperty float z\nend_header\n";
        for (Eigen::Index i = 0; i < ps.rows(); ++i) {
            format_coord(out, ps(i, 0));
            out << ' ';
            format_coord(out, ps(i, 1));
            out << ' ';
            format_coord(out, ps(i, 2));
            out << '\n';
        }
    } else {
        for (Eigen::Index i = 0; i < ps.rows(); ++i) {
            format_coord(out, ps(i, 0));
            out << ',';
            format_coord(out, ps(i, 1));
            out << ',';
            format_coord(out, ps(i, 2));
            out << '\n';
        }
    }
    out.flush();
    if (!out) throw IoError(IoErrorKind::WriteFailure, "write failed: " + path.string());
}

PointFormat format_from_extension(const std::filesystem::path& path) {
    auto ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    if (ext == ".ply") return PointFormat::Ply;
    return PointFormat::Csv;
}

std::vector<int> farthest_point_sample(const Points& ps, int count, std::uint64_t seed,
                                       bool force_first_zero) {
    const auto n = ps.rows();
    require(count >= 1 && count <= n, "farthest_point_sample: count out of range");

    std::vector<int> selected;
    selected.reserve(static_cast<size_t>(count));
    int first = 0;
    if (!force_first_zero) {
        std::mt19937_64 rng(seed);
        first = static_cast<int>(rng() % static_cast<std::uint64_t>(n));
    }
    selected.push_back(first);

    // min squared distance from every point to the selected set
    std::vector<double> min_d2(static_cast<size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i)
        min_d2[static_cast<size_t>(i)] = (ps.row(i) - ps.row(first)).squaredNorm();

    while (static_cast<int>(selected.size()) < count) {
        int best = -1;
        double best_d2 = -1.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            double d2 = min_d2[static_cast<size_t>(i)];
            if (d2 > best_d2) {
                best_d2 = d2;
                best = static_cast<int>(i);
            }
        }
        selected.push_back(best);
        for (Eigen::Index i = 0; i < n; ++i) {
            double d2 = (ps.row(i) - ps.row(best)).squaredNorm();
            if (d2 < min_d2[static_cast<size_t>(i)]) min_d2[static_cast<size_t>(i)] = d2;
        }
    }
    return selected;
}

Graph knn_rows(const Mat& rows, int k) {
    const auto n = rows.rows();
    require(n >= 2, "knn_rows: need at least 2 points");
    require(k >= 1, "knn_rows: k must be >= 1");
    const int kk = static_cast<int>(std::min<Eigen::Index>(k, n - 1));

    Graph g;
    g.k = kk;
    g.neighbors.assign(static_cast<size_t>(n), {});

    std::vector<std::pair<double, int>> cand;
    cand.reserve(static_cast<size_t>(n - 1));
    for (Eigen::Index i = 0; i < n; ++i) {
        cand.clear();
        for (Eigen::Index j = 0; j < n; ++j) {
            if (j == i) continue;
            double d2 = (rows.row(i) - rows.row(j)).squaredNorm();
            cand.emplace_back(d2, static_cast<int>(j));
        }
        std::partial_sort(cand.begin(), cand.begin() + kk, cand.end());
        auto& nb = g.neighbors[static_cast<size_t>(i)];
        nb.resize(static_cast<size_t>(kk));
        for (int j = 0; j < kk; ++j) nb[static_cast<size_t>(j)] = cand[static_cast<size_t>(j)].second;
    }
    return g;
}

Graph knn_indices(const Points& ps, int k) {
    return knn_rows(ps, k);
}

std::pair<Points, Vec3> center_align(const Points& fixed, const Points& moving) {
    require(fixed.rows() >= 1 && moving.rows() >= 1, "center_align: empty point set");
    Vec3 t = fixed.colwise().mean() - moving.colwise().mean();
    Points aligned = moving.rowwise() + t;
    return {aligned, t};
}

Points gather(const Points& ps, const std::vector<int>& indices) {
    Points out(static_cast<Eigen::Index>(indices.size()), 3);
    for (size_t i = 0; i < indices.size(); ++i) {
        require(indices[i] >= 0 && indices[i] < ps.rows(), "gather: index out of bounds");
        out.row(static_cast<Eigen::Index>(i)) = ps.row(indices[i]);
    }
    return out;
}

std::vector<int> nearest_indices(const Points& ps, const Points& queries) {
    std::vector<int> out(static_cast<size_t>(queries.rows()));
    for (Eigen::Index q = 0; q < queries.rows(); ++q) {
        int best = 0;
        double best_d2 = std::numeric_limits<double>::infinity();
        for (Eigen::Index i = 0; i < ps.rows(); ++i) {
            double d2 = (ps.row(i) - queries.row(q)).squaredNorm();
            if (d2 < best_d2) {
                best_d2 = d2;
                best = static_cast<int>(i);
            }
        }
        out[static_cast<size_t>(q)] = best;
    }
    return out;
}

}  // namespace driftreg
