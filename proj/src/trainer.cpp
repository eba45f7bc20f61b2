#include "unirit/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include "unirit/io.hpp"

namespace unirit {

PreparedPair prepare_pair(const std::string& id, const std::string& family, const PointCloud& source,
                          const PointCloud& target, bool has_correspondence, int points, std::uint64_t seed) {
  const bool paired = has_correspondence && source.size() == target.size();
  if (source.size() < points || target.size() < points)
    throw ValidationError("pair " + id + ": needs at least " + std::to_string(points) + " points per cloud (has " +
                          std::to_string(source.size()) + " / " + std::to_string(target.size()) + ")");
  auto pick = [&](const PointCloud& c, std::uint64_t stream) {
    return c.size() == points ? c : subsample(c, points, derive_seed(seed, stream));
  };
  PointCloud src = pick(source, 11);
  PointCloud tgt = pick(target, paired ? 11 : 12);
  const Normalization frame = joint_normalization(src, tgt);
  return PreparedPair{id,
                      family,
                      frame.apply(src.points()).cast<float>(),
                      frame.apply(tgt.points()).cast<float>(),
                      frame,
                      std::move(src),
                      std::move(tgt),
                      paired};
}

std::vector<PreparedPair> prepare_manifest(const Manifest& manifest, int points, std::uint64_t seed) {
  std::vector<PreparedPair> out;
  for (const auto& e : manifest.entries) {
    out.push_back(prepare_pair(e.id, e.family, read_cloud(e.source_path), read_cloud(e.target_path),
                               e.has_correspondence, points, derive_seed(seed, e.seed)));
  }
  return out;
}

PreparedPair prepare_synthetic(const SyntheticPair& pair, int points, std::uint64_t seed) {
  return prepare_pair(pair.id, to_string(pair.spec.family), pair.source, pair.target, pair.ground_truth.has_value(),
                      points, derive_seed(seed, pair.spec.seed));
}

PairLoss<float> train_step(UniRiTModel<float>& model, nn::AdamState<float>& adam, const PreparedPair& pair,
                           ForwardPass<float>* pass_out) {
  auto pass = model.forward(pair.source, pair.target);
  auto grads = model.zero_gradients();
  const PairLoss<float> loss = loss_and_gradients(model, pass, grads);
  if (!std::isfinite(loss.total)) return loss;
  auto params = model.parameters();
  auto gtensors = grads.tensors();
  nn::adam_step<float>(params, gtensors, adam);
  if (pass_out) *pass_out = std::move(pass);
  return loss;
}

TrainResult train(const std::vector<PreparedPair>& pairs, const UniRiTConfig& config, const TrainHooks& hooks) {
  UniRiTModel<float> model(config);
  nn::AdamState<float> adam;
  adam.lr = config.lr;
  return train(std::move(model), std::move(adam), pairs, hooks);
}

TrainResult train(UniRiTModel<float> model, nn::AdamState<float> adam, const std::vector<PreparedPair>& pairs,
                  const TrainHooks& hooks) {
  if (pairs.empty()) throw ValidationError("train: no training pairs");
  const UniRiTConfig& config = model.config();
  for (const auto& p : pairs)
    if (p.source.rows() != config.points_per_cloud || p.target.rows() != config.points_per_cloud)
      throw ValidationError("train: pair " + p.id + " is not subsampled to points_per_cloud");

  TrainResult result{std::move(model), std::move(adam), {}};
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const int first_epoch = static_cast<int>(result.adam.step / static_cast<long>(pairs.size()));
  for (int epoch = first_epoch; epoch < config.epochs; ++epoch) {
    std::mt19937_64 rng(derive_seed(config.seed, 1000 + static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    EpochRecord rec;
    rec.epoch = epoch + 1;
    ForwardPass<float> pass;
    for (std::size_t k = 0; k < order.size(); ++k) {
      const auto& pair = pairs[order[k]];
      const auto loss = train_step(result.model, result.adam, pair, hooks.on_step ? &pass : nullptr);
      if (!std::isfinite(loss.total))
        throw RuntimeFailure("train: non-finite loss at epoch " + std::to_string(epoch + 1) + ", iteration " +
                             std::to_string(k + 1) + ", pair " + pair.id);
      if (hooks.on_step) hooks.on_step(pair.id, loss, pass);
      rec.total += loss.total;
      rec.global += loss.global;
      rec.rigid += loss.rigid;
    }
    const double n = static_cast<double>(pairs.size());
    rec.total /= n;
    rec.global /= n;
    rec.rigid /= n;
    result.history.push_back(rec);
    if (hooks.on_epoch) hooks.on_epoch(rec, result.model, result.adam);
  }
  return result;
}

RegistrationResult register_pair(const UniRiTModel<float>& model, const PreparedPair& pair) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto pass = model.forward(pair.source, pair.target, false);
  const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();

  // Outputs are rebuilt in original units from the source: P-hat = composed(P) + scale * D.
  const Normalization& frame = pair.frame;
  std::vector<RigidTransformd> xfs;
  for (const auto& xf : pass.transforms()) xfs.push_back(frame.invert(xf.cast<double>()));
  const RigidTransformd composed = compose_all(xfs);
  const Points3d rigid_pts = transform_points(pair.source_raw.points(), composed);
  DisplacementField field(pass.displacement.cast<double>() * frame.scale);
  PointCloud registered(rigid_pts + field.displacements());
  RegistrationResult r{registered, PointCloud(rigid_pts), xfs, composed, std::move(field), MetricReport{}, ms};
  r.report.pair_id = pair.id;
  if (pair.has_correspondence) {
    r.report.pre_rmse = rmse_corresponded(pair.source_raw, pair.target_raw);
    r.report.rmse = rmse_corresponded(registered, pair.target_raw);
  }
  r.report.cd = chamfer(registered, pair.target_raw);
  return r;
}

RegistrationResult register_pair(const UniRiTModel<float>& model, const PointCloud& source, const PointCloud& target,
                                 bool has_correspondence, std::uint64_t seed) {
  const auto pair =
      prepare_pair("pair", "unknown", source, target, has_correspondence, model.config().points_per_cloud, seed);
  return register_pair(model, pair);
}

}  // namespace unirit
