#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "unirit/geom.hpp"

namespace unirit {

// ---------------------------------------------------------------------------
// Thin-plate spline warps
// ---------------------------------------------------------------------------

/// x -> affine * [1; x] + sum_j kernel_weights_j * |x - c_j|, fitted so that
/// control point c_j lands on c_j + offset_j (exactly when lambda = 0).
struct TpsWarp {
  Points3d control_points;
  Points3d target_offsets;
  Eigen::Matrix<double, 3, 4> affine;
  Points3d kernel_weights;
  double lambda = 0.0;

  Vec3 operator()(const Vec3& x) const;
};

TpsWarp tps_fit(const Points3d& control, const Points3d& offsets, double lambda = 0.0);
PointCloud tps_apply(const TpsWarp& warp, const PointCloud& cloud);
Points3d tps_apply(const TpsWarp& warp, const Points3d& points);

// ---------------------------------------------------------------------------
// Base shapes and pair generation
// ---------------------------------------------------------------------------

enum class ShapeFamily { sphere, ellipsoid, blob, torus, from_file };
enum class PairCase { A, B };

std::string to_string(ShapeFamily f);
ShapeFamily shape_family_from_string(const std::string& name);
std::string to_string(PairCase c);
PairCase pair_case_from_string(const std::string& name);

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

/// Recipe for one synthetic registration pair; every random draw derives from `seed`.
struct PairSpec {
  ShapeFamily family = ShapeFamily::sphere;
  std::filesystem::path base_path;  // from_file only
  int n_points = 1024;
  double deform_mm = 15.0;  // target mean displacement magnitude, cloud units
  PairCase pair_case = PairCase::A;
  Interval rotation_range_deg{-45.0, 45.0};
  Interval translation_range{-0.2, 0.2};  // normalized units of the target
  std::optional<Vec3> rotation_axis;      // uniform random axis when empty
  double noise_sigma = 0.0;
  double dropout_fraction = 0.0;
  std::uint64_t seed = 0;
  int control_points = 8;
  double shape_radius = 100.0;  // half the nominal shape size

  void validate() const;
};

struct SyntheticPair {
  std::string id;
  PairSpec spec;
  PointCloud source;
  PointCloud target;
  std::optional<DisplacementField> ground_truth;  // empty once dropout breaks 1:1 indexing
  RigidTransformd rigid_offset;                   // rigid part applied when building the source (Case B)
};

/// Surface samples of a base shape scaled to `radius`.
Points3d sample_shape(ShapeFamily family, int n, double radius, std::mt19937_64& rng);

/// Greedy farthest-point sampling starting from `first`.
std::vector<Eigen::Index> farthest_point_indices(const Points3d& points, int count, Eigen::Index first = 0);

SyntheticPair make_registration_pair(const PairSpec& spec, const std::string& id = "pair");

/// Uniform subset of n indices out of N without replacement, deterministic per seed.
std::vector<Eigen::Index> subsample_indices(Eigen::Index total, Eigen::Index n, std::uint64_t seed);
PointCloud subsample(const PointCloud& cloud, Eigen::Index n, std::uint64_t seed);
PointCloud take_rows(const PointCloud& cloud, const std::vector<Eigen::Index>& rows);

/// Derived 64-bit seed for a named random stream.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

// ---------------------------------------------------------------------------
// Dataset files
// ---------------------------------------------------------------------------

struct ManifestEntry {
  std::string id;
  std::string family;
  std::filesystem::path source_path;  // absolute once read
  std::filesystem::path target_path;
  std::string pair_case;
  double deform_mm = 0.0;
  std::uint64_t seed = 0;
  bool has_correspondence = true;
  RigidTransformd rigid_offset;
};

struct Manifest {
  std::filesystem::path path;
  std::vector<ManifestEntry> entries;
};

/// Writes <id>_source.xyz / <id>_target.xyz per pair plus `manifest_name`; paths in the manifest are
/// relative to `dir`.
Manifest write_dataset(const std::vector<SyntheticPair>& pairs, const std::filesystem::path& dir,
                       const std::string& manifest_name = "manifest.json");
Manifest read_manifest(const std::filesystem::path& path);

}  // namespace unirit
