#include "unirit/config.hpp"

#include <string>

namespace unirit {

void UniRiTConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ValidationError("config: " + msg); };
  if (n_iters < 1 && !ablate_rigid) fail("n_iters must be >= 1 unless the rigid stage is ablated");
  if (n_iters > 1000) fail("n_iters is unreasonably large");
  if (!(alpha >= 0.0 && alpha <= 1.0)) fail("alpha must lie in [0, 1]");
  if (encoder_widths.size() < 2 || encoder_widths.front() != 3) fail("encoder widths must start at 3");
  const int feat = encoder_widths.back();
  const int rot = rotation_param_width(rotation_param);
  if (rigid_decoder_widths.size() < 2 || rigid_decoder_widths.front() != 2 * feat ||
      rigid_decoder_widths.back() != rot + 3)
    fail("rigid decoder widths must run from " + std::to_string(2 * feat) + " to " + std::to_string(rot + 3));
  if (deform_decoder_widths.size() < 2 || deform_decoder_widths.front() != 2 * feat + 6 ||
      deform_decoder_widths.back() != 3)
    fail("deform decoder widths must run from " + std::to_string(2 * feat + 6) + " to 3");
  for (const auto* ws : {&encoder_widths, &rigid_decoder_widths, &deform_decoder_widths})
    for (int w : *ws)
      if (w <= 0) fail("layer widths must be positive");
  if (points_per_cloud < 1) fail("points_per_cloud must be positive");
  if (!(lr > 0.0)) fail("lr must be positive");
  if (epochs < 0) fail("epochs must be non-negative");
  if (checkpoint_every < 0) fail("checkpoint_every must be non-negative");
}

}  // namespace unirit
