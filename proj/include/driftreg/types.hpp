#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <vector>

namespace driftreg {

// One point per row, coordinates in mm. Row order is significant: indices
// identify points throughout the pipeline.
using Points = Eigen::Matrix<double, Eigen::Dynamic, 3>;
using Vec3 = Eigen::RowVector3d;
using Mat = Eigen::MatrixXd;

// Index i of `fixed` corresponds to index i of `corresponding`.
struct LandmarkPairs {
    Points fixed;
    Points corresponding;

    Eigen::Index size() const { return fixed.rows(); }
};

// kNN graph: neighbors[i] holds exactly min(k, N-1) neighbor indices of node
// i, nearest first, never including i itself.
struct Graph {
    int k = 0;
    std::vector<std::vector<int>> neighbors;

    Eigen::Index size() const { return static_cast<Eigen::Index>(neighbors.size()); }
};

enum class IoErrorKind {
    MissingFile,
    EmptyInput,
    MalformedRow,
    NonFinite,
    BadFormat,
    WriteFailure,
};

class IoError : public std::runtime_error {
public:
    IoError(IoErrorKind kind, std::string message, long line = -1)
        : std::runtime_error(std::move(message)), kind(kind), line(line) {}

    IoErrorKind kind;
    long line;  // 1-based data line where applicable, -1 otherwise
};

inline void require(bool cond, const std::string& message) {
    if (!cond) throw std::invalid_argument(message);
}

}  // namespace driftreg
