#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "driftreg/types.hpp"

namespace driftreg {

enum class ShapeKind { BranchingTree, Grid, SphereShell };

ShapeKind shape_kind_from_string(const std::string& name);
std::string to_string(ShapeKind kind);

constexpr double kShapeExtentMm = 200.0;
constexpr double kSphereRadiusMm = 80.0;
constexpr double kSphereJitterMm = 5.0;

Points gen_shape(ShapeKind kind, int n, std::uint64_t seed);

// p' = A p + t + sum_j a_j exp(-|p - c_j|^2 / (2 width^2))
struct DeformationSpec {
    Points centers;
    Points amplitudes;  // one 3-vector per center, mm
    double width = 60.0;
    Eigen::Matrix3d affine = Eigen::Matrix3d::Identity();
    Vec3 translation = Vec3::Zero();
};

Points apply_deformation(const Points& ps, const DeformationSpec& spec);

// Smooth random deformation with unit strength; scale_deformation(spec, s)
// interpolates it toward the identity (s = 0).
DeformationSpec random_deformation(std::uint64_t seed);
DeformationSpec scale_deformation(const DeformationSpec& base, double factor);

struct MakeCaseConfig {
    ShapeKind kind = ShapeKind::BranchingTree;
    int n = 512;
    std::uint64_t deform_seed = 1;
    double noise_sigma = 0.5;       // mm
    double outlier_frac = 0.0;      // [0, 1)
    int supervision_count = 64;
    int eval_count = 64;
    std::uint64_t seed = 1;
    // mean initial eval TRE the deformation is calibrated to; 0 = identity
    double target_initial_tre = 22.5;
};

struct RegistrationCase {
    Points fixed;
    Points moving;
    LandmarkPairs supervision;
    LandmarkPairs eval_landmarks;
    // moving index -> fixed index, -1 where the fixed partner was replaced
    // by an outlier
    std::vector<int> ground_truth;
    std::vector<bool> outlier;  // per moving point
    double initial_tre = 0.0;   // mean eval TRE before registration (mm)
    MakeCaseConfig config;
    double deformation_scale = 1.0;
};

RegistrationCase make_case(const MakeCaseConfig& cfg);

// Directory layout: fixed.csv, moving.csv, supervision.csv (fixed xyz,
// moving xyz), eval.csv (same 6 columns), meta.json.
void save_case(const RegistrationCase& c, const std::filesystem::path& dir);
RegistrationCase load_case(const std::filesystem::path& dir);

}  // namespace driftreg
