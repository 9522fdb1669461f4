#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "edgeattack/dataset.hpp"
#include "edgeattack/training.hpp"

namespace edgeattack {

/// Black-box re-identification model: image in, embedding out. One function
/// serves both modalities.
class VictimModel {
 public:
  virtual ~VictimModel() = default;
  /// Returns [N, E]. Deterministic.
  virtual torch::Tensor embed(const std::vector<const PersonImage*>& images) const = 0;
  virtual std::string name() const = 0;
  virtual int embedding_dim() const = 0;
  virtual std::string config_hash() const = 0;
};

/// Single-image convenience: length-E vector.
torch::Tensor embed(const PersonImage& image, const VictimModel& model);

struct RankingResult {
  std::string query_ref;
  std::vector<std::pair<std::string, double>> ordered_gallery;  // descending similarity
  std::vector<int> correct_positions;                           // 1-based
};

/// Cosine ranking; ties broken by ascending gallery identifier.
RankingResult rank(const PersonImage& query, const std::vector<PersonImage>& gallery, const VictimModel& model);

/// Same ranking from precomputed embeddings. `query` is [E], `gallery` [M, E].
RankingResult rank_embeddings(const std::string& query_ref, int query_pid, const torch::Tensor& query,
                              const std::vector<std::string>& gallery_refs, const std::vector<int>& gallery_pids,
                              const torch::Tensor& gallery);

struct ToyVictimOptions {
  int width = 32;  // channels of the first stage; doubled per stage
  int stages = 3;
  int stripes = 4;  // horizontal part-pooling stripes ahead of the projection
  int embedding_dim = 64;
};

struct ToyVictimNetImpl : torch::nn::Module {
  ToyVictimNetImpl(const ToyVictimOptions& options, int n_classes);
  /// images [N, 3, H, W] -> embeddings [N, E] (before normalization).
  torch::Tensor forward(const torch::Tensor& images);

  ToyVictimOptions options;
  torch::nn::Sequential backbone{nullptr};
  torch::nn::Linear projection{nullptr};
  torch::nn::BatchNorm1d neck{nullptr};
  torch::nn::Linear classifier{nullptr};
};
TORCH_MODULE(ToyVictimNet);

/// Small shared-backbone embedder trained on the toy data.
class ToyVictim final : public VictimModel {
 public:
  ToyVictim(ToyVictimNet net, ImageSize input_size, std::string config_hash);
  torch::Tensor embed(const std::vector<const PersonImage*>& images) const override;
  std::string name() const override { return "toy-victim"; }
  int embedding_dim() const override { return net_->options.embedding_dim; }
  std::string config_hash() const override { return config_hash_; }
  ImageSize input_size() const { return input_size_; }
  const ToyVictimNet& net() const { return net_; }

 private:
  ToyVictimNet net_;
  ImageSize input_size_;
  std::string config_hash_;
};

struct VictimTrainConfig {
  TrainConfig train = [] {
    TrainConfig t;
    t.optimizer = "adam";
    t.epochs = 40;
    t.learning_rate = 3e-4;
    t.weight_decay = 5e-4;
    t.images_per_id = 4;
    return t;
  }();
  ToyVictimOptions options;
  double triplet_margin = 0.3;
  double triplet_weight = 1.0;
  double flip_probability = 0.5;
  double erasing_probability = 0.0;
};

void to_json(nlohmann::json& j, const VictimTrainConfig& c);
void from_json(const nlohmann::json& j, VictimTrainConfig& c);

struct VictimTrainResult {
  std::shared_ptr<ToyVictim> model;
  TrainingCurve curve;  // monitor: training-set cross-modal rank-1 (%)
};

/// Identity cross-entropy on the classifier head plus batch-hard cross-modal
/// triplet loss on normalized embeddings.
VictimTrainResult train_toy_victim(const Dataset& dataset, const VictimTrainConfig& config);

void save_toy_victim(const ToyVictim& model, const std::filesystem::path& path, const nlohmann::json& provenance);
std::shared_ptr<ToyVictim> load_toy_victim(const std::filesystem::path& path);

/// Embedding-exchange victim: every `*.jsonl` file in `dir` holds records
/// {image_id, person_id, modality, camera_id, embedding}. Lookup is by the
/// image's source_path.
class ExchangeVictim final : public VictimModel {
 public:
  explicit ExchangeVictim(const std::filesystem::path& dir);
  torch::Tensor embed(const std::vector<const PersonImage*>& images) const override;
  std::string name() const override { return "exchange:" + dir_.string(); }
  int embedding_dim() const override { return dim_; }
  std::string config_hash() const override { return hash_; }
  std::size_t size() const { return table_.size(); }

 private:
  std::filesystem::path dir_;
  std::map<std::string, std::vector<float>> table_;
  int dim_ = 0;
  std::string hash_;
};

std::shared_ptr<VictimModel> external_victim(const std::filesystem::path& dir);

/// Writes one exchange file for `images` using `model`.
void write_embedding_exchange(const std::vector<const PersonImage*>& images, const VictimModel& model,
                              const std::filesystem::path& path);

}  // namespace edgeattack
