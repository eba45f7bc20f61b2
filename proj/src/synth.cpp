#include "unirit/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "json.hpp"
#include "unirit/io.hpp"

namespace unirit {

// ---------------------------------------------------------------------------
// TPS

namespace {

inline double tps_kernel(double r) { return r; }

}  // namespace

Vec3 TpsWarp::operator()(const Vec3& x) const {
  Vec3 out = affine.col(0) + affine.rightCols<3>() * x;
  for (Eigen::Index j = 0; j < control_points.rows(); ++j) {
    const double r = (x - control_points.row(j).transpose()).norm();
    out += tps_kernel(r) * kernel_weights.row(j).transpose();
  }
  return out;
}

TpsWarp tps_fit(const Points3d& control, const Points3d& offsets, double lambda) {
  const Eigen::Index m = control.rows();
  if (m < 4) throw ValidationError("tps_fit: need at least 4 control points");
  if (offsets.rows() != m) throw ValidationError("tps_fit: one offset per control point required");
  if (!(lambda >= 0.0)) throw ValidationError("tps_fit: lambda must be non-negative");
  if (!control.allFinite() || !offsets.allFinite()) throw ValidationError("tps_fit: non-finite input");

  Eigen::MatrixXd system = Eigen::MatrixXd::Zero(m + 4, m + 4);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) system(i, j) = tps_kernel((control.row(i) - control.row(j)).norm());
    system(i, i) += lambda;
    system(i, m) = 1.0;
    system.block(i, m + 1, 1, 3) = control.row(i);
  }
  system.block(m, 0, 4, m) = system.block(0, m, m, 4).transpose();

  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(m + 4, 3);
  rhs.topRows(m) = control + offsets;

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(system, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  const double cond = sv(sv.size() - 1) > 0.0 ? sv(0) / sv(sv.size() - 1) : std::numeric_limits<double>::infinity();
  if (!(cond <= 1e12))
    throw ValidationError("tps_fit: control points are degenerate (coplanar or duplicated); condition number " +
                          std::to_string(cond));
  Eigen::MatrixXd sol = svd.solve(rhs);
  // one step of iterative refinement
  sol += svd.solve(rhs - system * sol);

  TpsWarp warp;
  warp.control_points = control;
  warp.target_offsets = offsets;
  warp.lambda = lambda;
  warp.kernel_weights = sol.topRows(m);
  warp.affine = sol.bottomRows(4).transpose();
  return warp;
}

Points3d tps_apply(const TpsWarp& warp, const Points3d& points) {
  Points3d out(points.rows(), 3);
  for (Eigen::Index i = 0; i < points.rows(); ++i) out.row(i) = warp(points.row(i).transpose()).transpose();
  return out;
}

PointCloud tps_apply(const TpsWarp& warp, const PointCloud& cloud) {
  return PointCloud(tps_apply(warp, cloud.points()));
}

// ---------------------------------------------------------------------------
// Enumerations

std::string to_string(ShapeFamily f) {
  switch (f) {
    case ShapeFamily::sphere:
      return "sphere";
    case ShapeFamily::ellipsoid:
      return "ellipsoid";
    case ShapeFamily::blob:
      return "blob";
    case ShapeFamily::torus:
      return "torus";
    case ShapeFamily::from_file:
      return "from_file";
  }
  return "sphere";
}

ShapeFamily shape_family_from_string(const std::string& name) {
  if (name == "sphere") return ShapeFamily::sphere;
  if (name == "ellipsoid") return ShapeFamily::ellipsoid;
  if (name == "blob") return ShapeFamily::blob;
  if (name == "torus") return ShapeFamily::torus;
  if (name == "from_file") return ShapeFamily::from_file;
  throw ValidationError("unknown shape family '" + name + "'");
}

std::string to_string(PairCase c) { return c == PairCase::A ? "A" : "B"; }

PairCase pair_case_from_string(const std::string& name) {
  if (name == "A" || name == "a") return PairCase::A;
  if (name == "B" || name == "b") return PairCase::B;
  throw ValidationError("unknown case '" + name + "' (expected A or B)");
}

void PairSpec::validate() const {
  auto fail = [](const std::string& msg) { throw ValidationError("pair spec: " + msg); };
  if (n_points < 1) fail("n_points must be positive");
  if (!(deform_mm >= 0.0)) fail("deform_mm must be non-negative");
  if (!(rotation_range_deg.lo <= rotation_range_deg.hi)) fail("rotation range is not ordered");
  if (!(translation_range.lo <= translation_range.hi)) fail("translation range is not ordered");
  if (!(noise_sigma >= 0.0)) fail("noise_sigma must be non-negative");
  if (!(dropout_fraction >= 0.0 && dropout_fraction < 1.0)) fail("dropout_fraction must lie in [0, 1)");
  if (control_points < 4) fail("need at least 4 control points");
  if (!(shape_radius > 0.0)) fail("shape_radius must be positive");
  if (family == ShapeFamily::from_file && base_path.empty()) fail("from_file family needs a base path");
  if (rotation_axis && !(rotation_axis->norm() > 0.0)) fail("rotation axis must be non-zero");
}

// ---------------------------------------------------------------------------
// Shapes

namespace {

Vec3 random_direction(std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  for (;;) {
    Vec3 v(g(rng), g(rng), g(rng));
    const double n = v.norm();
    if (n > 1e-12) return v / n;
  }
}

// Low-order real harmonic basis on the unit sphere (degrees 2 and 3).
Eigen::Matrix<double, 12, 1> blob_basis(const Vec3& u) {
  const double x = u.x(), y = u.y(), z = u.z();
  Eigen::Matrix<double, 12, 1> b;
  b << x * y, y * z, x * z, x * x - y * y, 3 * z * z - 1,                    //
      x * (x * x - 3 * y * y), y * (3 * x * x - y * y), z * (x * x - y * y),  //
      x * y * z, x * (5 * z * z - 1), y * (5 * z * z - 1), z * (5 * z * z - 3);
  return b;
}

}  // namespace

Points3d sample_shape(ShapeFamily family, int n, double radius, std::mt19937_64& rng) {
  if (n < 1) throw ValidationError("sample_shape: n must be positive");
  Points3d pts(n, 3);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  switch (family) {
    case ShapeFamily::sphere:
      for (int i = 0; i < n; ++i) pts.row(i) = radius * random_direction(rng).transpose();
      break;
    case ShapeFamily::ellipsoid: {
      const Vec3 axes(1.0, 0.55, 0.4);
      const double amin = axes.minCoeff();
      for (int i = 0; i < n;) {
        const Vec3 u = random_direction(rng);
        const double accept = amin * u.cwiseQuotient(axes).norm();
        if (unit(rng) <= accept) pts.row(i++) = radius * u.cwiseProduct(axes).transpose();
      }
      break;
    }
    case ShapeFamily::blob: {
      std::normal_distribution<double> g(0.0, 1.0);
      Eigen::Matrix<double, 12, 1> coef;
      for (int k = 0; k < 12; ++k) coef(k) = g(rng) * (k < 5 ? 0.12 : 0.06);
      for (int i = 0; i < n; ++i) {
        const Vec3 u = random_direction(rng);
        const double r = std::max(0.3, 1.0 + coef.dot(blob_basis(u)));
        pts.row(i) = radius * r * u.transpose();
      }
      break;
    }
    case ShapeFamily::torus: {
      const double big = 0.7 * radius, small = 0.3 * radius;
      for (int i = 0; i < n;) {
        const double a = 2.0 * std::numbers::pi * unit(rng);
        const double b = 2.0 * std::numbers::pi * unit(rng);
        if (unit(rng) * (big + small) > big + small * std::cos(b)) continue;
        const double ring = big + small * std::cos(b);
        pts.row(i++) << ring * std::cos(a), ring * std::sin(a), small * std::sin(b);
      }
      break;
    }
    case ShapeFamily::from_file:
      throw ValidationError("sample_shape: from_file shapes are loaded, not sampled");
  }
  return pts;
}

std::vector<Eigen::Index> farthest_point_indices(const Points3d& points, int count, Eigen::Index first) {
  const Eigen::Index n = points.rows();
  if (count < 1 || count > n) throw ValidationError("farthest_point_indices: invalid count");
  std::vector<Eigen::Index> chosen{first};
  Eigen::VectorXd dist = (points.rowwise() - points.row(first)).rowwise().squaredNorm();
  while (static_cast<int>(chosen.size()) < count) {
    Eigen::Index next = 0;
    dist.maxCoeff(&next);
    chosen.push_back(next);
    dist = dist.cwiseMin((points.rowwise() - points.row(next)).rowwise().squaredNorm());
  }
  return chosen;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer over the combined value
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::vector<Eigen::Index> subsample_indices(Eigen::Index total, Eigen::Index n, std::uint64_t seed) {
  if (n < 1 || n > total)
    throw ValidationError("subsample: cannot draw " + std::to_string(n) + " of " + std::to_string(total) + " points");
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(total));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  std::mt19937_64 rng(seed);
  for (Eigen::Index i = 0; i < n; ++i) {
    std::uniform_int_distribution<Eigen::Index> pick(i, total - 1);
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(pick(rng))]);
  }
  idx.resize(static_cast<std::size_t>(n));
  return idx;
}

PointCloud take_rows(const PointCloud& cloud, const std::vector<Eigen::Index>& rows) {
  Points3d out(static_cast<Eigen::Index>(rows.size()), 3);
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = cloud.points().row(rows[i]);
  return PointCloud(std::move(out));
}

PointCloud subsample(const PointCloud& cloud, Eigen::Index n, std::uint64_t seed) {
  return take_rows(cloud, subsample_indices(cloud.size(), n, seed));
}

// ---------------------------------------------------------------------------
// Pairs

namespace {

enum Stream : std::uint64_t { kShape = 1, kDeform, kRigid, kNoise, kDropout };

Points3d deformation_field(const Points3d& target, const PairSpec& spec, std::mt19937_64& rng) {
  if (spec.deform_mm == 0.0) return Points3d::Zero(target.rows(), 3);
  const int m = std::min<int>(spec.control_points, static_cast<int>(target.rows()));
  if (m < 4) throw ValidationError("make_registration_pair: need at least 4 points for a TPS deformation");
  std::uniform_int_distribution<Eigen::Index> start(0, target.rows() - 1);
  const auto idx = farthest_point_indices(target, m, start(rng));
  Points3d control(m, 3), offsets(m, 3);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int j = 0; j < m; ++j) {
    control.row(j) = target.row(idx[static_cast<std::size_t>(j)]);
    offsets.row(j) << g(rng), g(rng), g(rng);
  }
  const TpsWarp warp = tps_fit(control, offsets, 0.0);
  Points3d d = tps_apply(warp, target) - target;
  d.rowwise() -= d.colwise().mean();
  const double mag = d.rowwise().norm().mean();
  if (!(mag > 0.0)) throw RuntimeFailure("make_registration_pair: TPS produced a zero deformation field");
  return d * (spec.deform_mm / mag);
}

}  // namespace

SyntheticPair make_registration_pair(const PairSpec& spec, const std::string& id) {
  spec.validate();
  Points3d target;
  if (spec.family == ShapeFamily::from_file) {
    const PointCloud base = read_cloud(spec.base_path);
    target = subsample(base, spec.n_points, derive_seed(spec.seed, kShape)).points();
  } else {
    std::mt19937_64 shape_rng(derive_seed(spec.seed, kShape));
    target = sample_shape(spec.family, spec.n_points, spec.shape_radius, shape_rng);
  }

  std::mt19937_64 deform_rng(derive_seed(spec.seed, kDeform));
  Points3d source = target + deformation_field(target, spec, deform_rng);

  RigidTransformd offset;
  if (spec.pair_case == PairCase::B) {
    std::mt19937_64 rng(derive_seed(spec.seed, kRigid));
    std::uniform_real_distribution<double> angle(spec.rotation_range_deg.lo, spec.rotation_range_deg.hi);
    std::uniform_real_distribution<double> shift(spec.translation_range.lo, spec.translation_range.hi);
    const Vec3 axis = spec.rotation_axis ? spec.rotation_axis->normalized() : random_direction(rng);
    const double deg = spec.rotation_range_deg.lo == spec.rotation_range_deg.hi ? spec.rotation_range_deg.lo
                                                                                : angle(rng);
    const auto tframe = normalize(PointCloud(target));
    Vec3 t;
    for (int k = 0; k < 3; ++k)
      t(k) = spec.translation_range.lo == spec.translation_range.hi ? spec.translation_range.lo : shift(rng);
    const Vec3 c = tframe.frame.offset;
    offset.rotation = axis_angle_rotation(axis, deg * std::numbers::pi / 180.0);
    offset.translation = c + tframe.frame.scale * t - offset.rotation * c;
    source = transform_points(source, offset);
  }

  if (spec.noise_sigma > 0.0) {
    std::mt19937_64 rng(derive_seed(spec.seed, kNoise));
    std::normal_distribution<double> g(0.0, spec.noise_sigma);
    for (Eigen::Index i = 0; i < source.size(); ++i) source.data()[i] += g(rng);
  }

  SyntheticPair pair{id, spec, PointCloud(source), PointCloud(target), std::nullopt, offset};
  const auto drop = static_cast<Eigen::Index>(std::floor(spec.dropout_fraction * static_cast<double>(source.rows())));
  if (drop > 0) {
    auto keep = subsample_indices(source.rows(), source.rows() - drop, derive_seed(spec.seed, kDropout));
    std::sort(keep.begin(), keep.end());
    pair.source = take_rows(pair.source, keep);
  } else {
    pair.ground_truth = DisplacementField(target - source);
  }
  return pair;
}

// ---------------------------------------------------------------------------
// Dataset files

namespace {

nlohmann::ordered_json rigid_to_json(const RigidTransformd& xf) {
  nlohmann::ordered_json j;
  std::vector<double> r(9), t(3);
  for (int i = 0; i < 3; ++i) {
    for (int k = 0; k < 3; ++k) r[static_cast<std::size_t>(3 * i + k)] = xf.rotation(i, k);
    t[static_cast<std::size_t>(i)] = xf.translation(i);
  }
  j["rotation"] = r;
  j["translation"] = t;
  return j;
}

RigidTransformd rigid_from_json(const nlohmann::json& j) {
  RigidTransformd xf;
  const auto r = j.at("rotation").get<std::vector<double>>();
  const auto t = j.at("translation").get<std::vector<double>>();
  if (r.size() != 9 || t.size() != 3) throw ValidationError("manifest: malformed rigid transform");
  for (int i = 0; i < 3; ++i) {
    for (int k = 0; k < 3; ++k) xf.rotation(i, k) = r[static_cast<std::size_t>(3 * i + k)];
    xf.translation(i) = t[static_cast<std::size_t>(i)];
  }
  return xf;
}

}  // namespace

Manifest write_dataset(const std::vector<SyntheticPair>& pairs, const std::filesystem::path& dir,
                       const std::string& manifest_name) {
  if (pairs.empty()) throw ValidationError("write_dataset: no pairs");
  std::filesystem::create_directories(dir);
  Manifest manifest;
  manifest.path = dir / manifest_name;
  nlohmann::ordered_json doc;
  doc["format_version"] = 1;
  doc["pairs"] = nlohmann::ordered_json::array();
  for (const auto& p : pairs) {
    const std::string src = p.id + "_source.xyz";
    const std::string tgt = p.id + "_target.xyz";
    write_cloud(dir / src, p.source);
    write_cloud(dir / tgt, p.target);
    nlohmann::ordered_json e;
    e["id"] = p.id;
    e["source_path"] = src;
    e["target_path"] = tgt;
    e["case"] = to_string(p.spec.pair_case);
    e["deform_mm"] = p.spec.deform_mm;
    e["seed"] = p.spec.seed;
    e["has_correspondence"] = p.ground_truth.has_value();
    e["family"] = to_string(p.spec.family);
    e["rigid_offset"] = rigid_to_json(p.rigid_offset);
    doc["pairs"].push_back(e);
    manifest.entries.push_back({p.id, to_string(p.spec.family), dir / src, dir / tgt, to_string(p.spec.pair_case),
                                p.spec.deform_mm, p.spec.seed, p.ground_truth.has_value(), p.rigid_offset});
  }
  write_text(manifest.path, doc.dump(2) + "\n");
  return manifest;
}

Manifest read_manifest(const std::filesystem::path& path) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("manifest " + path.string() + ": " + e.what());
  }
  Manifest manifest;
  manifest.path = path;
  const auto base = path.parent_path();
  try {
    for (const auto& e : doc.at("pairs")) {
      ManifestEntry m;
      m.id = e.at("id").get<std::string>();
      m.family = e.value("family", std::string("unknown"));
      m.source_path = base / e.at("source_path").get<std::string>();
      m.target_path = base / e.at("target_path").get<std::string>();
      m.pair_case = e.value("case", std::string("A"));
      m.deform_mm = e.value("deform_mm", 0.0);
      m.seed = e.value("seed", std::uint64_t{0});
      m.has_correspondence = e.value("has_correspondence", false);
      if (e.contains("rigid_offset")) m.rigid_offset = rigid_from_json(e.at("rigid_offset"));
      manifest.entries.push_back(std::move(m));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("manifest " + path.string() + ": " + e.what());
  }
  if (manifest.entries.empty()) throw ValidationError("manifest " + path.string() + " lists no pairs");
  return manifest;
}

}  // namespace unirit
