#include "unirit/metrics.hpp"

namespace unirit {

double rmse_corresponded(const PointCloud& a, const PointCloud& b) {
  if (a.size() != b.size())
    throw ValidationError("rmse_corresponded: clouds have different sizes (" + std::to_string(a.size()) + " vs " +
                          std::to_string(b.size()) + ")");
  return std::sqrt((a.points() - b.points()).rowwise().squaredNorm().mean());
}

double chamfer(const PointCloud& a, const PointCloud& b) {
  std::vector<Eigen::Index> nn;
  Eigen::VectorXd ab, ba;
  nearest_neighbors<double>(a.points(), b.points(), nn, ab);
  nearest_neighbors<double>(b.points(), a.points(), nn, ba);
  return ab.mean() + ba.mean();
}

double loss_global(const PointCloud& aligned, const PointCloud& target) {
  return directed_nn_loss<double>(aligned.points(), target.points());
}

double loss_rigid(const PointCloud& rigid_out, const PointCloud& target) {
  return directed_nn_loss<double>(rigid_out.points(), target.points());
}

double loss_total(double gl, double rd, const LossWeights& w) {
  if (gl < 0.0 || rd < 0.0) throw ValidationError("loss_total: losses must be non-negative");
  return w.alpha() * gl + (1.0 - w.alpha()) * rd;
}

}  // namespace unirit
