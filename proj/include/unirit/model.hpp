#pragma once

#include <Eigen/Dense>

#include <string>
#include <utility>
#include <vector>

#include "unirit/config.hpp"
#include "unirit/geom.hpp"
#include "unirit/metrics.hpp"
#include "unirit/nn.hpp"
#include "unirit/rotation.hpp"

namespace unirit {

/// Everything one rigid iteration keeps for the reverse pass.
template <typename Scalar>
struct RigidIterationCache {
  Points<Scalar> input;  // P_{S,i-1}
  nn::ForwardCache<Scalar> src_features;
  nn::PoolResult<Scalar> src_pooled;
  nn::ForwardCache<Scalar> decoder;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> raw;  // decoder output
  RigidTransform<Scalar> xf;
};

/// Cached forward pass through both stages.
template <typename Scalar>
struct ForwardPass {
  Points<Scalar> source;
  Points<Scalar> target;

  std::vector<nn::ForwardCache<Scalar>> tgt_features;  // one per rigid target encoder
  std::vector<nn::PoolResult<Scalar>> tgt_pooled;
  std::vector<RigidIterationCache<Scalar>> iterations;
  Points<Scalar> rigid_out;  // P'_S

  nn::ForwardCache<Scalar> src2_features, tgt2_features;
  nn::PoolResult<Scalar> src2_pooled, tgt2_pooled;
  typename nn::MlpStack<Scalar>::BroadcastInput deform_input;
  nn::ForwardCache<Scalar> deform_cache;
  Points<Scalar> displacement;
  Points<Scalar> output;  // P-hat_S

  std::vector<RigidTransform<Scalar>> transforms() const {
    std::vector<RigidTransform<Scalar>> out;
    for (const auto& it : iterations) out.push_back(it.xf);
    return out;
  }
};

template <typename Scalar>
struct RigidStageResult {
  Points<Scalar> cloud;
  std::vector<RigidTransform<Scalar>> transforms;
};

template <typename Scalar>
struct NonrigidStageResult {
  Points<Scalar> displacement;
  Points<Scalar> cloud;
};

/// Gradients for every stack, in UniRiTModel::stacks() order.
template <typename Scalar>
struct ModelGradients {
  std::vector<nn::StackGradients<Scalar>> stacks;

  void set_zero() {
    for (auto& s : stacks) s.set_zero();
  }
  std::vector<nn::Tensor2D<Scalar>*> tensors() {
    std::vector<nn::Tensor2D<Scalar>*> out;
    for (auto& s : stacks) nn::collect_gradients(s, out);
    return out;
  }
};

/// Two-stage registration network: iterated rigid stage followed by a
/// per-point displacement decoder.
template <typename Scalar>
class UniRiTModel {
 public:
  using Stack = nn::MlpStack<Scalar>;
  using Tensor = nn::Tensor2D<Scalar>;
  using Row = nn::RowVector<Scalar>;
  using Cloud = Points<Scalar>;

  explicit UniRiTModel(UniRiTConfig config) : config_(std::move(config)) {
    config_.validate();
    const std::uint64_t s = config_.seed * 4096;
    const std::size_t rigid_copies = config_.share_rigid_iters ? 1 : static_cast<std::size_t>(config_.n_iters);
    const auto enc_acts = activations(config_.encoder_widths, nn::Activation::leaky_relu, nn::Activation::leaky_relu);
    const auto rd_acts = activations(config_.rigid_decoder_widths, nn::Activation::relu, nn::Activation::none);
    const auto dd_acts = activations(config_.deform_decoder_widths, nn::Activation::relu, nn::Activation::none);
    for (std::size_t i = 0; i < rigid_copies; ++i) {
      rigid_src_.emplace_back(config_.encoder_widths, enc_acts, s + 3 * i + 0);
      rigid_tgt_.emplace_back(config_.encoder_widths, enc_acts, s + 3 * i + 1);
      rigid_dec_.emplace_back(config_.rigid_decoder_widths, rd_acts, s + 3 * i + 2);
      rigid_dec_.back().zero_output_layer();
    }
    src2_ = Stack(config_.encoder_widths, enc_acts, s + 4093);
    tgt2_ = Stack(config_.encoder_widths, enc_acts, s + 4094);
    deform_ = Stack(config_.deform_decoder_widths, dd_acts, s + 4095);
    deform_.zero_output_layer();
  }

  UniRiTModel(UniRiTConfig config, std::vector<Stack> rigid_src, std::vector<Stack> rigid_tgt,
              std::vector<Stack> rigid_dec, Stack src2, Stack tgt2, Stack deform)
      : config_(std::move(config)),
        rigid_src_(std::move(rigid_src)),
        rigid_tgt_(std::move(rigid_tgt)),
        rigid_dec_(std::move(rigid_dec)),
        src2_(std::move(src2)),
        tgt2_(std::move(tgt2)),
        deform_(std::move(deform)) {
    config_.validate();
    const std::size_t copies = config_.share_rigid_iters ? 1 : static_cast<std::size_t>(config_.n_iters);
    if (rigid_src_.size() != copies || rigid_tgt_.size() != copies || rigid_dec_.size() != copies)
      throw ValidationError("UniRiTModel: rigid stack count does not match configuration");
    check_widths();
  }

  const UniRiTConfig& config() const { return config_; }

  /// Named views of every stack in a fixed order (checkpoints, optimizer, gradients).
  std::vector<std::pair<std::string, const Stack*>> stacks() const {
    std::vector<std::pair<std::string, const Stack*>> out;
    for (std::size_t i = 0; i < rigid_src_.size(); ++i) {
      const std::string sfx = std::to_string(i);
      out.emplace_back("rigid_src_encoder_" + sfx, &rigid_src_[i]);
      out.emplace_back("rigid_tgt_encoder_" + sfx, &rigid_tgt_[i]);
      out.emplace_back("rigid_decoder_" + sfx, &rigid_dec_[i]);
    }
    out.emplace_back("nonrigid_src_encoder", &src2_);
    out.emplace_back("nonrigid_tgt_encoder", &tgt2_);
    out.emplace_back("deform_decoder", &deform_);
    return out;
  }

  std::vector<Stack*> mutable_stacks() {
    std::vector<Stack*> out;
    for (std::size_t i = 0; i < rigid_src_.size(); ++i) {
      out.push_back(&rigid_src_[i]);
      out.push_back(&rigid_tgt_[i]);
      out.push_back(&rigid_dec_[i]);
    }
    out.push_back(&src2_);
    out.push_back(&tgt2_);
    out.push_back(&deform_);
    return out;
  }

  std::vector<Tensor*> parameters() {
    std::vector<Tensor*> out;
    for (Stack* s : mutable_stacks()) s->collect_parameters(out);
    return out;
  }

  ModelGradients<Scalar> zero_gradients() const {
    ModelGradients<Scalar> g;
    for (const auto& [name, s] : stacks()) g.stacks.push_back(s->zero_gradients());
    return g;
  }

  template <typename Other>
  UniRiTModel<Other> cast() const {
    auto conv = [](const std::vector<Stack>& v) {
      std::vector<nn::MlpStack<Other>> out;
      for (const auto& s : v) out.push_back(s.template cast<Other>());
      return out;
    };
    return UniRiTModel<Other>(config_, conv(rigid_src_), conv(rigid_tgt_), conv(rigid_dec_),
                              src2_.template cast<Other>(), tgt2_.template cast<Other>(),
                              deform_.template cast<Other>());
  }

  /// One rigid refinement {R_i, t_i} from the current source and the target.
  RigidTransform<Scalar> rigid_step(const Cloud& source_i, const Cloud& target, int iteration = 0) const {
    check_pair(source_i, target);
    const std::size_t e = encoder_index(iteration);
    const auto tgt_pooled = nn::pool(rigid_tgt_[e].forward(target), config_.pooling);
    RigidIterationCache<Scalar> it;
    run_rigid_iteration(e, source_i, tgt_pooled.value, it, false);
    return it.xf;
  }

  /// Applies the rigid step n_iters times; with the ablation flag the source passes through untouched.
  RigidStageResult<Scalar> rigid_stage(const Cloud& source, const Cloud& target) const {
    check_pair(source, target);
    ForwardPass<Scalar> pass;
    run_rigid_stage(source, target, pass, false);
    return {pass.rigid_out, pass.transforms()};
  }

  NonrigidStageResult<Scalar> nonrigid_stage(const Cloud& p_s_prime, const Cloud& target) const {
    check_pair(p_s_prime, target);
    ForwardPass<Scalar> pass;
    pass.rigid_out = p_s_prime;
    pass.target = target;
    run_nonrigid_stage(pass, false);
    return {pass.displacement, pass.output};
  }

  /// Full forward pass retaining everything backward() needs.
  ForwardPass<Scalar> forward(const Cloud& source, const Cloud& target, bool keep_cache = true) const {
    check_pair(source, target);
    ForwardPass<Scalar> pass;
    run_rigid_stage(source, target, pass, keep_cache);
    run_nonrigid_stage(pass, keep_cache);
    return pass;
  }

  /// Reverse pass. `grad_output` is dL/dP-hat_S, `grad_rigid_out` the direct
  /// dL/dP'_S (rigid loss). Accumulates into `grads`; returns dL/d(source).
  Cloud backward(const ForwardPass<Scalar>& pass, const Cloud& grad_output, const Cloud& grad_rigid_out,
                 ModelGradients<Scalar>& grads) const {
    if (pass.deform_cache.empty()) throw ValidationError("UniRiTModel::backward: forward pass has no cache");
    const Eigen::Index n = pass.output.rows();
    if (grad_output.rows() != n || grad_rigid_out.rows() != n)
      throw ValidationError("UniRiTModel::backward: gradient shape mismatch");
    const std::size_t base2 = 3 * rigid_src_.size();
    const Eigen::Index feat = config_.encoder_widths.back();

    // Non-rigid stage: P-hat = P' + D(P', g, T).
    Tensor d_prime = grad_output + grad_rigid_out;
    const Tensor d_disp = grad_output;
    auto gb = deform_.backward_broadcast(pass.deform_cache, pass.deform_input, d_disp, grads.stacks[base2 + 2]);
    d_prime += gb.left;
    const Row g_src2 = gb.shared.leftCols(feat);
    const Row g_tgt2 = gb.shared.rightCols(feat);
    d_prime += src2_.backward(pass.src2_features, nn::pool_backward(pass.src2_pooled, g_src2), grads.stacks[base2]);
    tgt2_.backward(pass.tgt2_features, nn::pool_backward(pass.tgt2_pooled, g_tgt2), grads.stacks[base2 + 1]);

    // Rigid stage, last iteration first: S_i = S_{i-1} R^T + t.
    Tensor d_s = d_prime;
    std::vector<Row> g_tgt(pass.tgt_pooled.size());
    for (auto& g : g_tgt) g = Row::Zero(feat);
    for (std::size_t i = pass.iterations.size(); i-- > 0;) {
      const auto& it = pass.iterations[i];
      const std::size_t e = encoder_index(static_cast<int>(i));
      const Eigen::Matrix<Scalar, 3, 3> d_rot = d_s.transpose() * it.input;
      const Eigen::Matrix<Scalar, 3, 1> d_trans = d_s.colwise().sum().transpose();
      Tensor d_raw(1, it.raw.size());
      if (config_.rotation_param == RotationParam::six_d) {
        const Eigen::Matrix<Scalar, 6, 1> r6 = it.raw.template head<6>();
        d_raw.leftCols(6) = rotation_from_6d_backward<Scalar>(r6, d_rot).transpose();
      } else {
        const Eigen::Matrix<Scalar, 3, 1> r3 = it.raw.template head<3>();
        d_raw.leftCols(3) = rotation_from_axis_angle_backward<Scalar>(r3, d_rot).transpose();
      }
      d_raw.rightCols(3) = d_trans.transpose();
      Tensor d_s_prev = d_s * it.xf.rotation;
      const Tensor d_h = rigid_dec_[e].backward(it.decoder, d_raw, grads.stacks[3 * e + 2]);
      const Row d_src = d_h.leftCols(feat);
      g_tgt[tgt_slot(static_cast<int>(i))] += d_h.rightCols(feat);
      d_s_prev += rigid_src_[e].backward(it.src_features, nn::pool_backward(it.src_pooled, d_src),
                                         grads.stacks[3 * e]);
      d_s = std::move(d_s_prev);
    }
    for (std::size_t k = 0; k < pass.tgt_pooled.size(); ++k) {
      const std::size_t e = config_.share_rigid_iters ? 0 : k;
      rigid_tgt_[e].backward(pass.tgt_features[k], nn::pool_backward(pass.tgt_pooled[k], g_tgt[k]),
                             grads.stacks[3 * e + 1]);
    }
    return d_s;
  }

 private:
  static std::vector<nn::Activation> activations(const std::vector<int>& widths, nn::Activation hidden,
                                                 nn::Activation last) {
    std::vector<nn::Activation> out(widths.size() - 1, hidden);
    out.back() = last;
    return out;
  }

  void check_widths() const {
    for (const auto& s : rigid_src_)
      if (s.widths() != config_.encoder_widths) throw ValidationError("UniRiTModel: encoder widths mismatch");
    for (const auto& s : rigid_tgt_)
      if (s.widths() != config_.encoder_widths) throw ValidationError("UniRiTModel: encoder widths mismatch");
    for (const auto& s : rigid_dec_)
      if (s.widths() != config_.rigid_decoder_widths) throw ValidationError("UniRiTModel: rigid decoder mismatch");
    if (src2_.widths() != config_.encoder_widths || tgt2_.widths() != config_.encoder_widths)
      throw ValidationError("UniRiTModel: encoder widths mismatch");
    if (deform_.widths() != config_.deform_decoder_widths)
      throw ValidationError("UniRiTModel: deform decoder widths mismatch");
  }

  void check_pair(const Cloud& a, const Cloud& b) const {
    if (a.rows() < 1 || b.rows() < 1) throw ValidationError("UniRiTModel: empty cloud");
    if (a.rows() != b.rows())
      throw ValidationError("UniRiTModel: source and target must have the same point count (" +
                            std::to_string(a.rows()) + " vs " + std::to_string(b.rows()) + ")");
  }

  std::size_t encoder_index(int iteration) const {
    return config_.share_rigid_iters ? 0 : static_cast<std::size_t>(iteration);
  }
  std::size_t tgt_slot(int iteration) const { return encoder_index(iteration); }

  RigidTransform<Scalar> decode_transform(const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& raw) const {
    RigidTransform<Scalar> xf;
    if (config_.rotation_param == RotationParam::six_d) {
      const Eigen::Matrix<Scalar, 6, 1> r6 = raw.template head<6>();
      xf.rotation = rotation_from_6d<Scalar>(r6);
    } else {
      const Eigen::Matrix<Scalar, 3, 1> r3 = raw.template head<3>();
      xf.rotation = rotation_from_axis_angle<Scalar>(r3);
    }
    xf.translation = raw.template tail<3>();
    return xf;
  }

  void run_rigid_iteration(std::size_t e, const Cloud& source_i, const Row& tgt_feature,
                           RigidIterationCache<Scalar>& it, bool keep) const {
    const Tensor feats = rigid_src_[e].forward(source_i, keep ? &it.src_features : nullptr);
    it.src_pooled = nn::pool(feats, config_.pooling);
    Tensor h(1, it.src_pooled.value.cols() + tgt_feature.cols());
    h << it.src_pooled.value, tgt_feature;
    const Tensor out = rigid_dec_[e].forward(h, keep ? &it.decoder : nullptr);
    it.raw = out.row(0).transpose();
    it.xf = decode_transform(it.raw);
    if (keep) it.input = source_i;
  }

  void run_rigid_stage(const Cloud& source, const Cloud& target, ForwardPass<Scalar>& pass, bool keep) const {
    pass.source = source;
    pass.target = target;
    Cloud current = source;
    if (!config_.ablate_rigid) {
      const std::size_t copies = config_.share_rigid_iters ? 1 : static_cast<std::size_t>(config_.n_iters);
      pass.tgt_features.resize(copies);
      for (std::size_t k = 0; k < copies; ++k)
        pass.tgt_pooled.push_back(
            nn::pool(rigid_tgt_[k].forward(target, keep ? &pass.tgt_features[k] : nullptr), config_.pooling));
      for (int i = 0; i < config_.n_iters; ++i) {
        RigidIterationCache<Scalar> it;
        run_rigid_iteration(encoder_index(i), current, pass.tgt_pooled[tgt_slot(i)].value, it, keep);
        current = transform_points<Scalar>(current, it.xf);
        pass.iterations.push_back(std::move(it));
      }
    }
    pass.rigid_out = std::move(current);
  }

  void run_nonrigid_stage(ForwardPass<Scalar>& pass, bool keep) const {
    const Cloud& prime = pass.rigid_out;
    const Tensor fs = src2_.forward(prime, keep ? &pass.src2_features : nullptr);
    const Tensor ft = tgt2_.forward(pass.target, keep ? &pass.tgt2_features : nullptr);
    pass.src2_pooled = nn::pool(fs, config_.pooling);
    pass.tgt2_pooled = nn::pool(ft, config_.pooling);
    auto& in = pass.deform_input;
    in.left = prime;
    in.shared.resize(pass.src2_pooled.value.cols() + pass.tgt2_pooled.value.cols());
    in.shared << pass.src2_pooled.value, pass.tgt2_pooled.value;
    in.right = pass.target;
    pass.displacement = deform_.forward_broadcast(in, keep ? &pass.deform_cache : nullptr);
    pass.output = prime + pass.displacement;
  }

  UniRiTConfig config_;
  std::vector<Stack> rigid_src_, rigid_tgt_, rigid_dec_;
  Stack src2_, tgt2_, deform_;
};

/// Losses of one forward pass; the rigid term is zero under ablation.
template <typename Scalar>
struct PairLoss {
  Scalar global = 0;
  Scalar rigid = 0;
  Scalar total = 0;
};

/// L_total = a*L_gl(P-hat, T) + (1-a)*L_rd(P', T) and its gradient through both stages.
template <typename Scalar>
PairLoss<Scalar> loss_and_gradients(const UniRiTModel<Scalar>& model, const ForwardPass<Scalar>& pass,
                                    ModelGradients<Scalar>& grads, Points<Scalar>* grad_source = nullptr) {
  const Scalar alpha = static_cast<Scalar>(model.config().effective_alpha());
  PairLoss<Scalar> loss;
  Points<Scalar> g_gl, g_rd;
  loss.global = directed_nn_loss<Scalar>(pass.output, pass.target, &g_gl);
  if (model.config().ablate_rigid) {
    g_rd = Points<Scalar>::Zero(pass.rigid_out.rows(), 3);
  } else {
    loss.rigid = directed_nn_loss<Scalar>(pass.rigid_out, pass.target, &g_rd);
  }
  loss.total = alpha * loss.global + (Scalar(1) - alpha) * loss.rigid;
  Points<Scalar> d_out = alpha * g_gl;
  Points<Scalar> d_rigid = (Scalar(1) - alpha) * g_rd;
  auto d_src = model.backward(pass, d_out, d_rigid, grads);
  if (grad_source) *grad_source = d_src;
  return loss;
}

/// Loss value only (no caches kept).
template <typename Scalar>
PairLoss<Scalar> evaluate_loss(const UniRiTModel<Scalar>& model, const Points<Scalar>& source,
                               const Points<Scalar>& target) {
  const auto pass = model.forward(source, target, false);
  const Scalar alpha = static_cast<Scalar>(model.config().effective_alpha());
  PairLoss<Scalar> loss;
  loss.global = directed_nn_loss<Scalar>(pass.output, pass.target);
  if (!model.config().ablate_rigid) loss.rigid = directed_nn_loss<Scalar>(pass.rigid_out, pass.target);
  loss.total = alpha * loss.global + (Scalar(1) - alpha) * loss.rigid;
  return loss;
}

/// Composition of the per-iteration rigid maps, first applied first.
template <typename Scalar>
RigidTransform<Scalar> compose_all(const std::vector<RigidTransform<Scalar>>& xfs) {
  RigidTransform<Scalar> acc;
  for (const auto& xf : xfs) acc = compose(xf, acc);
  return acc;
}

}  // namespace unirit
