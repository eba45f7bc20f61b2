#include "unirit/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <sstream>

#include "unirit/parallel.hpp"
#include "unirit/synth.hpp"

namespace unirit {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;  // log(2 pi)

double log_sum_exp(const Eigen::VectorXd& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

Mat3 symmetrized(const Mat3& m) { return 0.5 * (m + m.transpose()); }

}  // namespace

GaussianMixture::GaussianMixture(Eigen::VectorXd weights, std::vector<Vec3> means, std::vector<Mat3> covariances,
                                 double floor)
    : weights_(std::move(weights)), means_(std::move(means)), covariances_(std::move(covariances)), floor_(floor) {
  const auto k = static_cast<std::size_t>(weights_.size());
  if (k < 1) throw ValidationError("GaussianMixture: need at least one component");
  if (means_.size() != k || covariances_.size() != k)
    throw ValidationError("GaussianMixture: weights, means and covariances must have equal length");
  if ((weights_.array() < 0.0).any() || !weights_.allFinite())
    throw ValidationError("GaussianMixture: weights must be finite and non-negative");
  if (std::abs(weights_.sum() - 1.0) > 1e-9) throw ValidationError("GaussianMixture: weights must sum to 1");
  if (!(floor_ >= 0.0)) throw ValidationError("GaussianMixture: floor must be non-negative");
  chol_.resize(k);
  log_norm_.resize(static_cast<Eigen::Index>(k));
  for (std::size_t i = 0; i < k; ++i) {
    const Mat3& c = covariances_[i];
    if (!means_[i].allFinite() || !c.allFinite()) throw ValidationError("GaussianMixture: non-finite component");
    const double scale = std::max(1.0, c.cwiseAbs().maxCoeff());
    if ((c - c.transpose()).cwiseAbs().maxCoeff() > 1e-9 * scale)
      throw ValidationError("GaussianMixture: covariance " + std::to_string(i) + " is not symmetric");
    Eigen::SelfAdjointEigenSolver<Mat3> eig(c, Eigen::EigenvaluesOnly);
    const double min_eig = eig.eigenvalues().minCoeff();
    if (!(min_eig > 0.0) || min_eig < floor_ * (1.0 - 1e-9))
      throw ValidationError("GaussianMixture: covariance " + std::to_string(i) +
                            " is not positive definite above the regularization floor");
    Eigen::LLT<Mat3> llt(c);
    if (llt.info() != Eigen::Success)
      throw ValidationError("GaussianMixture: covariance " + std::to_string(i) + " is not positive definite");
    chol_[i] = llt.matrixL();
    const double log_det = 2.0 * chol_[i].diagonal().array().log().sum();
    log_norm_(static_cast<Eigen::Index>(i)) = std::log(weights_(static_cast<Eigen::Index>(i))) - 1.5 * kLog2Pi - 0.5 * log_det;
  }
}

void GaussianMixture::component_log_densities(const Vec3& x, Eigen::VectorXd& out) const {
  out.resize(weights_.size());
  for (Eigen::Index k = 0; k < weights_.size(); ++k) {
    const Vec3 z = chol_[static_cast<std::size_t>(k)].triangularView<Eigen::Lower>().solve(x - means_[static_cast<std::size_t>(k)]);
    out(k) = log_norm_(k) - 0.5 * z.squaredNorm();
  }
}

double GaussianMixture::log_density(const Vec3& x) const {
  Eigen::VectorXd c;
  component_log_densities(x, c);
  return log_sum_exp(c);
}

double GaussianMixture::density(const Vec3& x) const { return std::exp(log_density(x)); }

Points3d GaussianMixture::sample(Eigen::Index n, std::mt19937_64& rng) const {
  std::discrete_distribution<int> pick(weights_.data(), weights_.data() + weights_.size());
  std::normal_distribution<double> g(0.0, 1.0);
  Points3d out(n, 3);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(pick(rng));
    const Vec3 z(g(rng), g(rng), g(rng));
    out.row(i) = (means_[k] + chol_[k] * z).transpose();
  }
  return out;
}

// ---------------------------------------------------------------------------
// EM

namespace {

std::vector<Vec3> kmeans_pp(const Points3d& x, int k, std::mt19937_64& rng) {
  const Eigen::Index n = x.rows();
  std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
  std::vector<Vec3> centers{x.row(first(rng)).transpose()};
  Eigen::VectorXd d2 = (x.rowwise() - centers[0].transpose()).rowwise().squaredNorm();
  std::uniform_real_distribution<double> u(0.0, 1.0);
  while (static_cast<int>(centers.size()) < k) {
    const double total = d2.sum();
    Eigen::Index chosen = 0;
    if (total > 0.0) {
      double r = u(rng) * total;
      for (chosen = 0; chosen < n - 1; ++chosen) {
        r -= d2(chosen);
        if (r < 0.0) break;
      }
    } else {
      chosen = first(rng);
    }
    centers.emplace_back(x.row(chosen).transpose());
    d2 = d2.cwiseMin((x.rowwise() - centers.back().transpose()).rowwise().squaredNorm());
  }
  return centers;
}

struct EmWork {
  Eigen::VectorXd weights;
  std::vector<Vec3> means;
  std::vector<Mat3> covs;
};

// Responsibility-weighted parameter update; empty components keep their previous parameters.
void m_step(const Points3d& x, const Eigen::MatrixXd& resp, double floor, EmWork& w) {
  const Eigen::Index n = x.rows();
  const Eigen::Index k = resp.cols();
  const Eigen::VectorXd nk = resp.colwise().sum().transpose();
  for (Eigen::Index j = 0; j < k; ++j) {
    const auto ju = static_cast<std::size_t>(j);
    if (nk(j) <= 1e-12) continue;
    const Vec3 mu = (resp.col(j).transpose() * x).transpose() / nk(j);
    const Points3d centered = x.rowwise() - mu.transpose();
    Mat3 cov = (centered.transpose() * resp.col(j).asDiagonal() * centered) / nk(j);
    w.means[ju] = mu;
    w.covs[ju] = symmetrized(cov) + floor * Mat3::Identity();
  }
  w.weights = nk / static_cast<double>(n);
  // components that never received mass
  for (Eigen::Index j = 0; j < k; ++j) w.weights(j) = std::max(w.weights(j), 1e-300);
  w.weights /= w.weights.sum();
}

EmResult run_em(const Points3d& x, int k, std::uint64_t seed, double floor, const EmOptions& opt) {
  std::mt19937_64 rng(seed);
  const auto centers = kmeans_pp(x, k, rng);
  const Eigen::Index n = x.rows();

  Eigen::MatrixXd resp = Eigen::MatrixXd::Zero(n, k);
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (int j = 0; j < k; ++j) {
      const double d = (x.row(i).transpose() - centers[static_cast<std::size_t>(j)]).squaredNorm();
      if (d < bd) {
        bd = d;
        best = j;
      }
    }
    resp(i, best) = 1.0;
  }
  EmWork w;
  w.means = centers;
  const Vec3 mean = x.colwise().mean().transpose();
  const Points3d centered = x.rowwise() - mean.transpose();
  const Mat3 global = symmetrized(centered.transpose() * centered / static_cast<double>(n)) + floor * Mat3::Identity();
  w.covs.assign(static_cast<std::size_t>(k), global);
  m_step(x, resp, floor, w);

  std::vector<double> trace;
  Eigen::VectorXd comp;
  for (int it = 0; it < opt.max_iterations; ++it) {
    GaussianMixture g(w.weights, w.means, w.covs, floor);
    double ll = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      g.component_log_densities(x.row(i).transpose(), comp);
      const double lse = log_sum_exp(comp);
      ll += lse;
      resp.row(i) = (comp.array() - lse).exp().transpose();
    }
    ll /= static_cast<double>(n);
    if (!std::isfinite(ll)) throw RuntimeFailure("fit_em: non-finite log-likelihood");
    trace.push_back(ll);
    if (trace.size() >= 2 && std::abs(ll - trace[trace.size() - 2]) < opt.tolerance)
      return EmResult{std::move(g), std::move(trace), it + 1};
    if (it + 1 == opt.max_iterations) return EmResult{std::move(g), std::move(trace), it + 1};
    m_step(x, resp, floor, w);
  }
  return EmResult{GaussianMixture(w.weights, w.means, w.covs, floor), std::move(trace), opt.max_iterations};
}

}  // namespace

EmResult fit_em_traced(const PointCloud& cloud, int k, std::uint64_t seed, const EmOptions& options) {
  if (k < 1) throw ValidationError("fit_em: K must be positive");
  if (k > cloud.size())
    throw ValidationError("fit_em: K = " + std::to_string(k) + " exceeds the point count " + std::to_string(cloud.size()));
  if (options.max_iterations < 1 || options.restarts < 1) throw ValidationError("fit_em: invalid options");
  const Points3d& x = cloud.points();
  const double diag2 = (x.colwise().maxCoeff() - x.colwise().minCoeff()).squaredNorm();
  if (!(diag2 > 0.0)) throw ValidationError("fit_em: degenerate cloud (all points identical)");
  const double floor = options.floor_factor * diag2;
  std::optional<EmResult> best;
  for (int r = 0; r < options.restarts; ++r) {
    EmResult res = run_em(x, k, r == 0 ? seed : derive_seed(seed, static_cast<std::uint64_t>(r)), floor, options);
    if (!best || res.log_likelihood.back() > best->log_likelihood.back()) best = std::move(res);
  }
  return std::move(*best);
}

GaussianMixture fit_em(const PointCloud& cloud, int k, std::uint64_t seed, const EmOptions& options) {
  return fit_em_traced(cloud, k, seed, options).mixture;
}

double mean_log_likelihood(const GaussianMixture& g, const PointCloud& cloud) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < cloud.size(); ++i) s += g.log_density(cloud.point(i));
  return s / static_cast<double>(cloud.size());
}

double mc_divergence(const GaussianMixture& gx, const GaussianMixture& gy, const PointCloud& samples) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < samples.size(); ++i) {
    const Vec3 p = samples.point(i);
    s += gx.log_density(p) - gy.log_density(p);
  }
  const double out = s / static_cast<double>(samples.size());
  if (!std::isfinite(out)) throw RuntimeFailure("mc_divergence: non-finite result");
  return out;
}

GaussianMixture rigid_pushforward(const GaussianMixture& g, const RigidTransformd& xf) {
  std::vector<Vec3> means;
  std::vector<Mat3> covs;
  for (int k = 0; k < g.components(); ++k) {
    const auto ku = static_cast<std::size_t>(k);
    means.push_back(xf.rotation * g.means()[ku] + xf.translation);
    covs.push_back(symmetrized(xf.rotation * g.covariances()[ku] * xf.rotation.transpose()));
  }
  return GaussianMixture(g.weights(), std::move(means), std::move(covs), g.floor());
}

GaussianMixture componentwise_map(const GaussianMixture& g, const std::vector<MeanMap>& mean_maps,
                                  const std::vector<CovarianceMap>& cov_maps) {
  const auto k = static_cast<std::size_t>(g.components());
  if (mean_maps.size() != k || cov_maps.size() != k)
    throw ValidationError("componentwise_map: need one mean map and one covariance map per component");
  std::vector<Vec3> means;
  std::vector<Mat3> covs;
  for (std::size_t i = 0; i < k; ++i) {
    means.push_back(mean_maps[i](g.means()[i]));
    covs.push_back(cov_maps[i](g.covariances()[i]));
  }
  return GaussianMixture(g.weights(), std::move(means), std::move(covs), g.floor());
}

// ---------------------------------------------------------------------------
// Divergence matrix

std::string DivergenceMatrix::to_csv() const {
  std::ostringstream out;
  out << "label";
  for (const auto& l : labels) out << ',' << l;
  out << '\n';
  char buf[64];
  for (std::size_t i = 0; i < labels.size(); ++i) {
    out << labels[i];
    for (std::size_t j = 0; j < labels.size(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
      out << ',' << buf;
    }
    out << '\n';
  }
  return out.str();
}


DivergenceMatrix divergence_matrix(const std::vector<LabeledCollection>& collections, const DivergenceOptions& options) {
  if (collections.size() < 2) throw ValidationError("divergence_matrix: need at least two labels");
  if (options.samples_per_pair < 1 || options.picks < 1 || options.repetitions < 1)
    throw ValidationError("divergence_matrix: counts must be positive");
  for (const auto& c : collections)
    if (c.clouds.empty()) throw ValidationError("divergence_matrix: label '" + c.label + "' has no clouds");

  // Fit each cloud once.
  std::vector<std::pair<std::size_t, std::size_t>> jobs;
  for (std::size_t l = 0; l < collections.size(); ++l)
    for (std::size_t i = 0; i < collections[l].clouds.size(); ++i) jobs.emplace_back(l, i);
  std::vector<std::optional<GaussianMixture>> fitted(jobs.size());
  std::vector<std::size_t> offset(collections.size(), 0);
  for (std::size_t l = 1; l < collections.size(); ++l) offset[l] = offset[l - 1] + collections[l - 1].clouds.size();
  parallel_for(jobs.size(), options.threads, [&](std::size_t j) {
    const auto [l, i] = jobs[j];
    fitted[j] = fit_em(collections[l].clouds[i], options.components, derive_seed(options.seed, 7919 * l + i), options.em);
  });

  const auto labels = collections.size();
  std::vector<std::pair<std::size_t, std::size_t>> cells;
  for (std::size_t a = 0; a < labels; ++a)
    for (std::size_t b = a; b < labels; ++b) cells.emplace_back(a, b);
  std::vector<double> cell_value(cells.size(), 0.0);
  parallel_for(cells.size(), options.threads, [&](std::size_t c) {
    const auto [a, b] = cells[c];
    std::mt19937_64 rng(derive_seed(options.seed, 1000003 + 1009 * a + b));
    const auto na = collections[a].clouds.size(), nb = collections[b].clouds.size();
    std::uniform_int_distribution<std::size_t> pa(0, na - 1), pb(0, nb - 1);
    double sum = 0.0;
    const int total = options.picks * options.repetitions;
    for (int r = 0; r < total; ++r) {
      const std::size_t i = pa(rng);
      std::size_t j = pb(rng);
      if (a == b && nb > 1)
        while (j == i) j = pb(rng);
      const auto& gx = *fitted[offset[a] + i];
      const auto& gy = *fitted[offset[b] + j];
      const PointCloud sx(gx.sample(options.samples_per_pair, rng));
      const PointCloud sy(gy.sample(options.samples_per_pair, rng));
      sum += 0.5 * (mc_divergence(gx, gy, sx) + mc_divergence(gy, gx, sy));
    }
    cell_value[c] = sum / total;
  });

  DivergenceMatrix m;
  for (const auto& c : collections) m.labels.push_back(c.label);
  m.values.resize(static_cast<Eigen::Index>(labels), static_cast<Eigen::Index>(labels));
  for (std::size_t c = 0; c < cells.size(); ++c) {
    const auto [a, b] = cells[c];
    m.values(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = cell_value[c];
    m.values(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(a)) = cell_value[c];
  }
  return m;
}

}  // namespace unirit
