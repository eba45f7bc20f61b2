#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "unirit/config.hpp"
#include "unirit/geom.hpp"
#include "unirit/metrics.hpp"
#include "unirit/model.hpp"
#include "unirit/synth.hpp"

namespace unirit {

/// A pair subsampled to the model's point budget and mapped into a joint unit frame.
struct PreparedPair {
  std::string id;
  std::string family;
  Points3f source;  // normalized, single precision
  Points3f target;
  Normalization frame;
  PointCloud source_raw;  // subsampled, original units
  PointCloud target_raw;
  bool has_correspondence = false;
};

/// Subsamples to `points` (shared indices when the pair is index-corresponded) and normalizes jointly.
PreparedPair prepare_pair(const std::string& id, const std::string& family, const PointCloud& source,
                          const PointCloud& target, bool has_correspondence, int points, std::uint64_t seed);

std::vector<PreparedPair> prepare_manifest(const Manifest& manifest, int points, std::uint64_t seed);
PreparedPair prepare_synthetic(const SyntheticPair& pair, int points, std::uint64_t seed);

struct EpochRecord {
  int epoch = 0;
  double total = 0.0;  // mean over the epoch's pairs
  double global = 0.0;
  double rigid = 0.0;
};

struct TrainHooks {
  /// Called after every epoch; the model is the post-epoch state.
  std::function<void(const EpochRecord&, const UniRiTModel<float>&, const nn::AdamState<float>&)> on_epoch;
  /// Called after every optimizer step with the forward pass that produced the loss.
  std::function<void(const std::string& pair_id, const PairLoss<float>&, const ForwardPass<float>&)> on_step;
};

struct TrainResult {
  UniRiTModel<float> model;
  nn::AdamState<float> adam;
  std::vector<EpochRecord> history;
};

/// One forward/backward/Adam update on a single pair (batch size 1).
PairLoss<float> train_step(UniRiTModel<float>& model, nn::AdamState<float>& adam, const PreparedPair& pair,
                           ForwardPass<float>* pass_out = nullptr);

/// Epoch loop with per-seed shuffling. Aborts with RuntimeFailure on a non-finite loss.
TrainResult train(const std::vector<PreparedPair>& pairs, const UniRiTConfig& config, const TrainHooks& hooks = {});
/// Continues training an existing model and optimizer state.
TrainResult train(UniRiTModel<float> model, nn::AdamState<float> adam, const std::vector<PreparedPair>& pairs,
                  const TrainHooks& hooks = {});

struct RegistrationResult {
  PointCloud registered;  // P-hat_S, original units
  PointCloud rigid_out;   // P'_S, original units
  std::vector<RigidTransformd> transforms;  // per rigid iteration, original units
  RigidTransformd composed;
  DisplacementField displacement;  // non-rigid stage offsets, original units
  MetricReport report;
  double inference_ms = 0.0;
};

/// Full two-stage inference on one pair; metrics are reported in the input units.
RegistrationResult register_pair(const UniRiTModel<float>& model, const PreparedPair& pair);
RegistrationResult register_pair(const UniRiTModel<float>& model, const PointCloud& source, const PointCloud& target,
                                 bool has_correspondence = true, std::uint64_t seed = 0);

}  // namespace unirit
