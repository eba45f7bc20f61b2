#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "unirit/error.hpp"
#include "unirit/geom.hpp"

namespace unirit {

/// K weighted 3D Gaussians. Validated on construction; Cholesky factors are cached.
class GaussianMixture {
 public:
  GaussianMixture(Eigen::VectorXd weights, std::vector<Vec3> means, std::vector<Mat3> covariances,
                  double floor = 0.0);

  int components() const { return static_cast<int>(weights_.size()); }
  const Eigen::VectorXd& weights() const { return weights_; }
  const std::vector<Vec3>& means() const { return means_; }
  const std::vector<Mat3>& covariances() const { return covariances_; }
  double floor() const { return floor_; }

  /// log sum_k pi_k N(x | mu_k, Sigma_k), evaluated with log-sum-exp.
  double log_density(const Vec3& x) const;
  double density(const Vec3& x) const;

  /// Component log-densities log(pi_k N(x|k)) into `out` (size K).
  void component_log_densities(const Vec3& x, Eigen::VectorXd& out) const;

  Points3d sample(Eigen::Index n, std::mt19937_64& rng) const;

 private:
  Eigen::VectorXd weights_;
  std::vector<Vec3> means_;
  std::vector<Mat3> covariances_;
  double floor_;
  std::vector<Mat3> chol_;          // lower factors
  Eigen::VectorXd log_norm_;        // log pi_k - 1.5 log(2 pi) - 0.5 log|Sigma_k|
};

struct EmOptions {
  int max_iterations = 200;
  double tolerance = 1e-6;  // on the change of mean log-likelihood
  int restarts = 1;
  double floor_factor = 1e-6;  // floor = factor * (bounding-box diagonal)^2
};

struct EmResult {
  GaussianMixture mixture;
  std::vector<double> log_likelihood;  // mean per-point value after every iteration
  int iterations = 0;
};

/// EM with k-means++ seeding; deterministic per seed.
EmResult fit_em_traced(const PointCloud& cloud, int k, std::uint64_t seed, const EmOptions& options = {});
GaussianMixture fit_em(const PointCloud& cloud, int k, std::uint64_t seed, const EmOptions& options = {});

double mean_log_likelihood(const GaussianMixture& g, const PointCloud& cloud);

/// Mean over samples of log gX(s) - log gY(s).
double mc_divergence(const GaussianMixture& gx, const GaussianMixture& gy, const PointCloud& samples);

GaussianMixture rigid_pushforward(const GaussianMixture& g, const RigidTransformd& xf);

using MeanMap = std::function<Vec3(const Vec3&)>;
using CovarianceMap = std::function<Mat3(const Mat3&)>;

/// Replaces each component's mean and covariance through its own map; weights are kept.
GaussianMixture componentwise_map(const GaussianMixture& g, const std::vector<MeanMap>& mean_maps,
                                  const std::vector<CovarianceMap>& cov_maps);

struct LabeledCollection {
  std::string label;
  std::vector<PointCloud> clouds;
};

struct DivergenceOptions {
  int components = 16;
  int samples_per_pair = 2000;
  int picks = 12;        // random pairs per repetition
  int repetitions = 4;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  EmOptions em;
};

struct DivergenceMatrix {
  std::vector<std::string> labels;
  Eigen::MatrixXd values;

  std::string to_csv() const;
};

/// Symmetrized Monte Carlo divergence averaged over random cloud pairs per label pair.
DivergenceMatrix divergence_matrix(const std::vector<LabeledCollection>& collections, const DivergenceOptions& options);

}  // namespace unirit
