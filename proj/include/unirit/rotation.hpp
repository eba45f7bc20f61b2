#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <string>

#include "unirit/error.hpp"

namespace unirit {

enum class RotationParam { six_d, axis_angle };

std::string to_string(RotationParam p);
RotationParam rotation_param_from_string(const std::string& name);

inline int rotation_param_width(RotationParam p) { return p == RotationParam::six_d ? 6 : 3; }

namespace detail {

template <typename Scalar>
Eigen::Matrix<Scalar, 3, 3> hat(const Eigen::Matrix<Scalar, 3, 1>& w) {
  Eigen::Matrix<Scalar, 3, 3> k;
  k << Scalar(0), -w.z(), w.y(), w.z(), Scalar(0), -w.x(), -w.y(), w.x(), Scalar(0);
  return k;
}

}  // namespace detail

/// 6D parameterization: the raw pair (a, b) is offset by (e_x, e_y) so a zero
/// input yields the identity, then Gram-Schmidt gives columns b1, b2, b1 x b2.
template <typename Scalar>
Eigen::Matrix<Scalar, 3, 3> rotation_from_6d(const Eigen::Matrix<Scalar, 6, 1>& raw) {
  using V3 = Eigen::Matrix<Scalar, 3, 1>;
  const V3 a = raw.template head<3>() + V3::UnitX();
  const V3 b = raw.template tail<3>() + V3::UnitY();
  const Scalar na = a.norm();
  if (!(na > Scalar(0))) throw RuntimeFailure("6D rotation: degenerate first column");
  const V3 b1 = a / na;
  const V3 u = b - b1.dot(b) * b1;
  const Scalar nu = u.norm();
  if (!(nu > Scalar(0))) throw RuntimeFailure("6D rotation: columns are parallel");
  const V3 b2 = u / nu;
  Eigen::Matrix<Scalar, 3, 3> r;
  r.col(0) = b1;
  r.col(1) = b2;
  r.col(2) = b1.cross(b2);
  return r;
}

/// Gradient of a scalar loss w.r.t. the 6 raw values given dL/dR.
template <typename Scalar>
Eigen::Matrix<Scalar, 6, 1> rotation_from_6d_backward(const Eigen::Matrix<Scalar, 6, 1>& raw,
                                                       const Eigen::Matrix<Scalar, 3, 3>& grad_r) {
  using V3 = Eigen::Matrix<Scalar, 3, 1>;
  const V3 a = raw.template head<3>() + V3::UnitX();
  const V3 b = raw.template tail<3>() + V3::UnitY();
  const Scalar na = a.norm();
  const V3 b1 = a / na;
  const V3 u = b - b1.dot(b) * b1;
  const Scalar nu = u.norm();
  const V3 b2 = u / nu;

  const V3 g3 = grad_r.col(2);
  V3 gb1 = grad_r.col(0) + b2.cross(g3);
  const V3 gb2 = grad_r.col(1) + g3.cross(b1);

  const V3 gu = (gb2 - b2 * b2.dot(gb2)) / nu;
  const V3 gb = gu - b1 * b1.dot(gu);
  gb1 += -b1.dot(b) * gu - gu.dot(b1) * b;
  const V3 ga = (gb1 - b1 * b1.dot(gb1)) / na;

  Eigen::Matrix<Scalar, 6, 1> out;
  out << ga, gb;
  return out;
}

/// Rodrigues map exp(hat(w)); smooth through w = 0.
template <typename Scalar>
Eigen::Matrix<Scalar, 3, 3> rotation_from_axis_angle(const Eigen::Matrix<Scalar, 3, 1>& w) {
  const Scalar t2 = w.squaredNorm();
  const Scalar t = std::sqrt(t2);
  Scalar a, b;
  if (t < Scalar(1e-4)) {
    a = Scalar(1) - t2 / Scalar(6);
    b = Scalar(0.5) - t2 / Scalar(24);
  } else {
    a = std::sin(t) / t;
    b = (Scalar(1) - std::cos(t)) / t2;
  }
  const Eigen::Matrix<Scalar, 3, 3> k = detail::hat(w);
  return Eigen::Matrix<Scalar, 3, 3>::Identity() + a * k + b * k * k;
}

template <typename Scalar>
Eigen::Matrix<Scalar, 3, 1> rotation_from_axis_angle_backward(const Eigen::Matrix<Scalar, 3, 1>& w,
                                                               const Eigen::Matrix<Scalar, 3, 3>& grad_r) {
  using M3 = Eigen::Matrix<Scalar, 3, 3>;
  const Scalar t2 = w.squaredNorm();
  const Scalar t = std::sqrt(t2);
  // a, b and (da/dt)/t, (db/dt)/t
  Scalar a, b, da, db;
  if (t < Scalar(1e-4)) {
    a = Scalar(1) - t2 / Scalar(6);
    b = Scalar(0.5) - t2 / Scalar(24);
    da = -Scalar(1) / Scalar(3) + t2 / Scalar(30);
    db = -Scalar(1) / Scalar(12) + t2 / Scalar(180);
  } else {
    const Scalar s = std::sin(t), c = std::cos(t);
    a = s / t;
    b = (Scalar(1) - c) / t2;
    da = (t * c - s) / (t2 * t);
    db = (t * s - Scalar(2) * (Scalar(1) - c)) / (t2 * t2);
  }
  const M3 k = detail::hat(w);
  const M3 k2 = k * k;
  Eigen::Matrix<Scalar, 3, 1> out;
  for (int i = 0; i < 3; ++i) {
    const M3 e = detail::hat<Scalar>(Eigen::Matrix<Scalar, 3, 1>::Unit(i));
    const M3 dr = da * w(i) * k + a * e + db * w(i) * k2 + b * (e * k + k * e);
    out(i) = (grad_r.array() * dr.array()).sum();
  }
  return out;
}

}  // namespace unirit
