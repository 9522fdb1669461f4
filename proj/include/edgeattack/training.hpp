#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/optim.h>

namespace edgeattack {

/// Hyperparameters shared by the three trainers. Module-specific knobs live in
/// the per-module configs that embed this struct.
struct TrainConfig {
  std::string optimizer = "sgd";  // "sgd" (with momentum) or "adam"
  int epochs = 50;
  double learning_rate = 1e-3;
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
  int ids_per_batch = 8;
  int images_per_id = 2;  // per modality
  // Where to persist the last finite-loss parameters when training diverges.
  std::optional<std::filesystem::path> divergence_checkpoint;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Optimizer selected by `config.optimizer` over `parameters`.
std::unique_ptr<torch::optim::Optimizer> make_optimizer(const TrainConfig& config,
                                                        std::vector<torch::Tensor> parameters);

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  double monitor = 0.0;  // trainer-specific validation quantity
};

struct TrainingCurve {
  std::string monitor_name = "monitor";
  std::vector<EpochRecord> epochs;

  void write_csv(const std::filesystem::path& path) const;
};

}  // namespace edgeattack
