#include "unirit/geom.hpp"

#include <algorithm>

namespace unirit {

PointCloud apply_rigid(const PointCloud& cloud, const RigidTransformd& xf) {
  if (!xf.rotation.allFinite() || !xf.translation.allFinite())
    throw ValidationError("apply_rigid: non-finite transform");
  if (!xf.is_proper()) throw ValidationError("apply_rigid: rotation is not a proper orthonormal matrix");
  return PointCloud(transform_points(cloud.points(), xf));
}

PointCloud apply_displacement(const PointCloud& cloud, const DisplacementField& field) {
  if (field.size() != cloud.size())
    throw ValidationError("apply_displacement: field length " + std::to_string(field.size()) +
                          " does not match cloud size " + std::to_string(cloud.size()));
  return PointCloud(cloud.points() + field.displacements());
}

Vec3 centroid(const PointCloud& cloud) { return cloud.points().colwise().mean().transpose(); }

namespace {

Normalization fit_frame(const Points3d& pts) {
  Normalization frame;
  frame.offset = pts.colwise().mean().transpose();
  const double extent = (pts.rowwise() - frame.offset.transpose()).cwiseAbs().maxCoeff();
  if (!(extent > 0.0)) throw ValidationError("normalize: degenerate cloud (all points identical)");
  frame.scale = extent;
  return frame;
}

}  // namespace

NormalizedCloud normalize(const PointCloud& cloud) {
  if (cloud.size() < 2) throw ValidationError("normalize: need at least two points");
  Normalization frame = fit_frame(cloud.points());
  return {PointCloud(frame.apply(cloud.points())), frame};
}

Normalization joint_normalization(const PointCloud& a, const PointCloud& b) {
  Points3d both(a.size() + b.size(), 3);
  both << a.points(), b.points();
  if (both.rows() < 2) throw ValidationError("joint_normalization: need at least two points");
  return fit_frame(both);
}

PointCloud denormalize(const PointCloud& cloud, const Normalization& frame) {
  return PointCloud(frame.invert(cloud.points()));
}

DisplacementField displacement_between(const PointCloud& a, const PointCloud& b) {
  if (a.size() != b.size()) throw ValidationError("displacement_between: size mismatch");
  return DisplacementField(b.points() - a.points());
}

RigidTransformd procrustes(const PointCloud& from, const PointCloud& to) {
  if (from.size() != to.size()) throw ValidationError("procrustes: size mismatch");
  const Vec3 cf = centroid(from);
  const Vec3 ct = centroid(to);
  const Points3d a = from.points().rowwise() - cf.transpose();
  const Points3d b = to.points().rowwise() - ct.transpose();
  const Mat3 h = a.transpose() * b;
  Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  d(2, 2) = (svd.matrixV() * svd.matrixU().transpose()).determinant() < 0 ? -1.0 : 1.0;
  RigidTransformd xf;
  xf.rotation = svd.matrixV() * d * svd.matrixU().transpose();
  xf.translation = ct - xf.rotation * cf;
  return xf;
}

double rotation_angle_between(const Mat3& a, const Mat3& b) {
  const double c = std::clamp(((a.transpose() * b).trace() - 1.0) / 2.0, -1.0, 1.0);
  return std::acos(c);
}

}  // namespace unirit
