#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <utility>

#include "unirit/error.hpp"

namespace unirit {

/// N x 3 row-major point block; row i is point i.
template <typename Scalar>
using Points = Eigen::Matrix<Scalar, Eigen::Dynamic, 3, Eigen::RowMajor>;

using Points3d = Points<double>;
using Points3f = Points<float>;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  return m.allFinite();
}

/// Ordered set of N >= 1 finite 3D points. Immutable after construction.
class PointCloud {
 public:
  explicit PointCloud(Points3d points) : points_(std::move(points)) {
    if (points_.rows() < 1) throw ValidationError("point cloud must contain at least one point");
    if (!points_.allFinite()) throw ValidationError("point cloud contains non-finite coordinates");
  }

  const Points3d& points() const { return points_; }
  Eigen::Index size() const { return points_.rows(); }
  Vec3 point(Eigen::Index i) const { return points_.row(i).transpose(); }

  template <typename Scalar>
  Points<Scalar> cast() const {
    return points_.template cast<Scalar>();
  }

  friend bool operator==(const PointCloud& a, const PointCloud& b) {
    return a.points_.rows() == b.points_.rows() && a.points_ == b.points_;
  }

 private:
  Points3d points_;
};

/// Rotation R and translation t acting as x -> R x + t.
template <typename Scalar>
struct RigidTransform {
  using Matrix3 = Eigen::Matrix<Scalar, 3, 3>;
  using Vector3 = Eigen::Matrix<Scalar, 3, 1>;

  Matrix3 rotation = Matrix3::Identity();
  Vector3 translation = Vector3::Zero();

  static RigidTransform identity() { return {}; }

  /// Max-norm deviation of R^T R from I.
  Scalar orthonormality_error() const {
    return (rotation.transpose() * rotation - Matrix3::Identity()).cwiseAbs().maxCoeff();
  }

  bool is_proper(Scalar tol = Scalar(1e-6)) const {
    return rotation.allFinite() && translation.allFinite() && orthonormality_error() <= tol &&
           std::abs(rotation.determinant() - Scalar(1)) <= tol;
  }

  RigidTransform inverse() const {
    RigidTransform inv;
    inv.rotation = rotation.transpose();
    inv.translation = -(inv.rotation * translation);
    return inv;
  }

  template <typename Other>
  RigidTransform<Other> cast() const {
    RigidTransform<Other> out;
    out.rotation = rotation.template cast<Other>();
    out.translation = translation.template cast<Other>();
    return out;
  }
};

using RigidTransformd = RigidTransform<double>;
using RigidTransformf = RigidTransform<float>;

/// `after` applied to the result of `first`: x -> after(first(x)).
template <typename Scalar>
RigidTransform<Scalar> compose(const RigidTransform<Scalar>& after, const RigidTransform<Scalar>& first) {
  RigidTransform<Scalar> out;
  out.rotation = after.rotation * first.rotation;
  out.translation = after.rotation * first.translation + after.translation;
  return out;
}

/// Row-form rigid map on a raw block: X R^T + 1 t^T.
template <typename Scalar>
Points<Scalar> transform_points(const Points<Scalar>& pts, const RigidTransform<Scalar>& xf) {
  Points<Scalar> out = pts * xf.rotation.transpose();
  out.rowwise() += xf.translation.transpose();
  return out;
}

/// Rotation about a unit axis by `angle` radians.
inline Mat3 axis_angle_rotation(const Vec3& axis, double angle) {
  return Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
}

/// Per-point 3-vector offsets; finite, length fixed at construction.
class DisplacementField {
 public:
  explicit DisplacementField(Points3d displacements) : d_(std::move(displacements)) {
    if (!d_.allFinite()) throw ValidationError("displacement field contains non-finite entries");
  }

  static DisplacementField zero(Eigen::Index n) { return DisplacementField(Points3d::Zero(n, 3)); }

  const Points3d& displacements() const { return d_; }
  Eigen::Index size() const { return d_.rows(); }

  /// Mean Euclidean norm of the per-point displacements.
  double mean_magnitude() const { return d_.rows() == 0 ? 0.0 : d_.rowwise().norm().mean(); }

 private:
  Points3d d_;
};

/// Clouds mapped into a common unit frame: x_norm = (x - offset) / scale.
struct Normalization {
  double scale = 1.0;
  Vec3 offset = Vec3::Zero();

  Points3d apply(const Points3d& pts) const {
    Points3d out = pts.rowwise() - offset.transpose();
    return out / scale;
  }
  Points3d invert(const Points3d& pts) const {
    Points3d out = pts * scale;
    out.rowwise() += offset.transpose();
    return out;
  }
  /// Expresses a normalized-frame rigid map in original units.
  RigidTransformd invert(const RigidTransformd& xf) const {
    RigidTransformd out;
    out.rotation = xf.rotation;
    out.translation = scale * xf.translation + offset - xf.rotation * offset;
    return out;
  }
};

struct NormalizedCloud {
  PointCloud cloud;
  Normalization frame;
};

PointCloud apply_rigid(const PointCloud& cloud, const RigidTransformd& xf);
PointCloud apply_displacement(const PointCloud& cloud, const DisplacementField& field);
Vec3 centroid(const PointCloud& cloud);

/// Centers on the centroid and scales so the max absolute coordinate is 1.
NormalizedCloud normalize(const PointCloud& cloud);
/// One frame fitted to the union of both clouds.
Normalization joint_normalization(const PointCloud& a, const PointCloud& b);
PointCloud denormalize(const PointCloud& cloud, const Normalization& frame);

/// Per-index difference b - a; requires equal sizes.
DisplacementField displacement_between(const PointCloud& a, const PointCloud& b);

/// Least-squares rotation/translation mapping `from` onto `to` with known correspondences (Kabsch).
RigidTransformd procrustes(const PointCloud& from, const PointCloud& to);

/// Geodesic angle in radians between two rotations.
double rotation_angle_between(const Mat3& a, const Mat3& b);

}  // namespace unirit
