#pragma once

#include <Eigen/Dense>

#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "unirit/geom.hpp"

namespace unirit {

/// Mixing coefficient between the global and the rigid-stage loss.
class LossWeights {
 public:
  LossWeights() = default;
  explicit LossWeights(double alpha) : alpha_(alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("alpha must lie in [0, 1]");
  }
  double alpha() const { return alpha_; }

 private:
  double alpha_ = 0.5;
};

struct MetricReport {
  std::string pair_id;
  std::optional<double> pre_rmse;  // empty when the pair has no index correspondence
  std::optional<double> rmse;
  double cd = 0.0;
};

/// For each row of `query`, the index of the closest row in `reference` and
/// the squared distance to it. Brute force; ties go to the lowest index.
template <typename Scalar>
void nearest_neighbors(const Points<Scalar>& query, const Points<Scalar>& reference, std::vector<Eigen::Index>& index,
                       Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& sq_dist) {
  const Eigen::Index n = query.rows();
  const Eigen::Index m = reference.rows();
  index.assign(static_cast<std::size_t>(n), 0);
  sq_dist.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Scalar qx = query(i, 0), qy = query(i, 1), qz = query(i, 2);
    Scalar best = std::numeric_limits<Scalar>::infinity();
    Eigen::Index best_j = 0;
    for (Eigen::Index j = 0; j < m; ++j) {
      const Scalar dx = qx - reference(j, 0);
      const Scalar dy = qy - reference(j, 1);
      const Scalar dz = qz - reference(j, 2);
      const Scalar d = dx * dx + dy * dy + dz * dz;
      if (d < best) {
        best = d;
        best_j = j;
      }
    }
    index[static_cast<std::size_t>(i)] = best_j;
    sq_dist(i) = best;
  }
}

/// sqrt(mean_i min_j |a_i - t_j|^2). When `grad` is non-null it receives
/// d(loss)/d(aligned), routed through the chosen neighbor; zero at loss 0.
template <typename Scalar>
Scalar directed_nn_loss(const Points<Scalar>& aligned, const Points<Scalar>& target, Points<Scalar>* grad = nullptr) {
  if (aligned.rows() == 0 || target.rows() == 0) throw ValidationError("nearest-neighbor loss: empty cloud");
  std::vector<Eigen::Index> nn;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> d2;
  nearest_neighbors<Scalar>(aligned, target, nn, d2);
  const Scalar n = static_cast<Scalar>(aligned.rows());
  const Scalar loss = std::sqrt(d2.sum() / n);
  if (grad) {
    grad->setZero(aligned.rows(), 3);
    if (loss > Scalar(0)) {
      const Scalar k = Scalar(1) / (n * loss);
      for (Eigen::Index i = 0; i < aligned.rows(); ++i)
        grad->row(i) = k * (aligned.row(i) - target.row(nn[static_cast<std::size_t>(i)]));
    }
  }
  return loss;
}

double rmse_corresponded(const PointCloud& a, const PointCloud& b);
double chamfer(const PointCloud& a, const PointCloud& b);
/// Global loss: aligned (final output) against target.
double loss_global(const PointCloud& aligned, const PointCloud& target);
/// Rigid-stage loss: same functional applied to the rigid stage output.
double loss_rigid(const PointCloud& rigid_out, const PointCloud& target);
double loss_total(double gl, double rd, const LossWeights& w);

}  // namespace unirit
