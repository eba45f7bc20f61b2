#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "json.hpp"
#include "unirit/config.hpp"
#include "unirit/model.hpp"
#include "unirit/nn.hpp"

namespace unirit {

inline constexpr int kCheckpointFormatVersion = 1;

nlohmann::ordered_json to_json(const UniRiTConfig& config);

/// Overrides the fields present in `j` on top of `base`. Unknown keys are a ValidationError.
UniRiTConfig config_from_json(const nlohmann::json& j, UniRiTConfig base = {});

struct Checkpoint {
  UniRiTModel<float> model;
  std::optional<nn::AdamState<float>> adam;
  int epoch = 0;  // completed training epochs
};

nlohmann::ordered_json checkpoint_to_json(const UniRiTModel<float>& model, const nn::AdamState<float>* adam = nullptr,
                                          int epoch = 0);
Checkpoint checkpoint_from_json(const nlohmann::json& j);

void save_checkpoint(const std::filesystem::path& path, const UniRiTModel<float>& model,
                     const nn::AdamState<float>* adam = nullptr, int epoch = 0);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Parses a JSON file, turning syntax errors into ValidationError.
nlohmann::json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const nlohmann::ordered_json& j);

}  // namespace unirit
