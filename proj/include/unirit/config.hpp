#pragma once

#include <cstdint>
#include <vector>

#include "unirit/nn.hpp"
#include "unirit/rotation.hpp"

namespace unirit {

/// Hyper-parameters of the two-stage model and its training loop.
struct UniRiTConfig {
  int n_iters = 3;  // rigid refinement iterations
  double alpha = 0.5;
  std::vector<int> encoder_widths{3, 64, 128, 256};
  std::vector<int> rigid_decoder_widths{512, 256, 64, 9};
  std::vector<int> deform_decoder_widths{518, 256, 128, 3};
  RotationParam rotation_param = RotationParam::six_d;
  nn::Pooling pooling = nn::Pooling::max;
  bool ablate_rigid = false;
  bool share_rigid_iters = true;
  int points_per_cloud = 1024;
  double lr = 1e-4;
  int epochs = 300;
  std::uint64_t seed = 0;
  int checkpoint_every = 50;  // epochs between periodic checkpoints; 0 disables

  /// Throws ValidationError when widths do not plumb together.
  void validate() const;

  /// Effective mixing weight: the rigid term vanishes when the rigid stage is ablated.
  double effective_alpha() const { return ablate_rigid ? 1.0 : alpha; }
};

}  // namespace unirit
