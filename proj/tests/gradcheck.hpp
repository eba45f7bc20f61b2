#pragma once

// Central finite-difference oracle shared by the nn/model gradient tests.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

namespace unirit::gradcheck {

struct GradCheckResult {
  double max_rel_error = 0.0;
  int checked = 0;
  int failures = 0;
};

/// Relative error with a floor so near-zero derivatives are compared absolutely.
inline double rel_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Perturbs `value` by +-h, evaluates `loss`, restores it.
inline double central_difference(double& value, double h, const std::function<double()>& loss) {
  const double saved = value;
  value = saved + h;
  const double up = loss();
  value = saved - h;
  const double down = loss();
  value = saved;
  return (up - down) / (2.0 * h);
}

/// Checks `fraction` of the entries (at least `min_count`) of every tensor.
template <typename Tensor>
GradCheckResult check_tensors(const std::vector<Tensor*>& params, const std::vector<Tensor*>& grads, double fraction,
                              int min_count, double h, double tol, double floor, const std::function<double()>& loss,
                              std::mt19937_64& rng) {
  GradCheckResult res;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = *params[k];
    const auto& g = *grads[k];
    const Eigen::Index size = p.size();
    const Eigen::Index want = std::min<Eigen::Index>(size, std::max<Eigen::Index>(min_count, static_cast<Eigen::Index>(fraction * size)));
    std::uniform_int_distribution<Eigen::Index> pick(0, size - 1);
    for (Eigen::Index c = 0; c < want; ++c) {
      const Eigen::Index idx = want == size ? c : pick(rng);
      double& value = p.data()[idx];
      const double numeric = central_difference(value, h, loss);
      const double analytic = g.data()[idx];
      const double err = rel_error(analytic, numeric, floor);
      res.max_rel_error = std::max(res.max_rel_error, err);
      ++res.checked;
      if (err > tol) ++res.failures;
    }
  }
  return res;
}

}  // namespace unirit::gradcheck
