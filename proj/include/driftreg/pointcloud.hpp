#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "driftreg/types.hpp"

namespace driftreg {

enum class PointFormat { Csv, Ply };

// CSV: three comma-separated decimal fields per line; an optional leading
// "x,y,z" header is skipped. PLY: ASCII 1.0 with float x,y,z vertex
// properties only.
Points load_pointset(const std::filesystem::path& path, PointFormat format);
void save_pointset(const Points& ps, const std::filesystem::path& path, PointFormat format);

PointFormat format_from_extension(const std::filesystem::path& path);

// Greedy farthest point sampling. The first index is drawn uniformly from the
// seeded RNG unless force_first_zero is set; every further pick maximizes the
// minimum distance to the already-selected set, ties broken by lowest index.
std::vector<int> farthest_point_sample(const Points& ps, int count, std::uint64_t seed,
                                       bool force_first_zero = false);

// Exhaustive kNN over rows of an arbitrary-dimension feature matrix.
// Distances are compared as exact per-pair sums so results are reproducible;
// ties broken by lowest index, self excluded.
Graph knn_rows(const Mat& rows, int k);

Graph knn_indices(const Points& ps, int k);

// Translates `moving` so its centroid matches the centroid of `fixed`.
// Returns the aligned set and the applied translation.
std::pair<Points, Vec3> center_align(const Points& fixed, const Points& moving);

Points gather(const Points& ps, const std::vector<int>& indices);

// Index of the nearest row of `ps` for every row of `queries` (lowest index
// wins on ties).
std::vector<int> nearest_indices(const Points& ps, const Points& queries);

}  // namespace driftreg
