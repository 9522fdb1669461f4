#include "edgeattack/training.hpp"

#include <fstream>
#include <iomanip>

#include "edgeattack/common.hpp"

namespace edgeattack {

std::unique_ptr<torch::optim::Optimizer> make_optimizer(const TrainConfig& config,
                                                        std::vector<torch::Tensor> parameters) {
  if (config.optimizer == "sgd") {
    return std::make_unique<torch::optim::SGD>(std::move(parameters), torch::optim::SGDOptions(config.learning_rate)
                                                                          .momentum(config.momentum)
                                                                          .weight_decay(config.weight_decay));
  }
  if (config.optimizer == "adam") {
    return std::make_unique<torch::optim::Adam>(
        std::move(parameters), torch::optim::AdamOptions(config.learning_rate).weight_decay(config.weight_decay));
  }
  throw ConfigError("unknown optimizer '" + config.optimizer + "'");
}

void TrainingCurve::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write training curve " + path.string());
  out << "epoch,loss," << monitor_name << "\n";
  out << std::setprecision(9);
  for (const auto& e : epochs) out << e.epoch << "," << e.loss << "," << e.monitor << "\n";
}

}  // namespace edgeattack
