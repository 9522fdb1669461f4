#pragma once

#include <array>
#include <filesystem>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "edgeattack/dataset.hpp"
#include "edgeattack/training.hpp"

namespace edgeattack {

inline constexpr int kEdgeLevels = 5;

/// Side outputs L1..L5 of the edge backbone, batched: levels[k-1] has shape
/// [N, 1, H / 2^(k-1), W / 2^(k-1)] with values in [0, 1]. Levels listed in
/// `removed` are left undefined.
struct EdgeMapStack {
  std::array<torch::Tensor, kEdgeLevels> levels;
  std::set<int> removed;
  int input_height = 0;
  int input_width = 0;

  bool has_level(int k) const { return !removed.contains(k) && levels[static_cast<std::size_t>(k - 1)].defined(); }
};

/// Output of the coarse-to-fine fusion. `stage_outputs[i]` is u_{i+1}; the
/// last one is `u` itself at the input resolution.
struct FusedEdgeMap {
  torch::Tensor u;
  std::vector<torch::Tensor> stage_outputs;
};

struct EdgeFeature {
  torch::Tensor vector;  // [D], unit norm
  std::optional<int> person_id;
  Modality modality = Modality::Visible;
  std::string source_path;
};

struct IdentityCentroid {
  int person_id = -1;
  Modality modality = Modality::Visible;
  torch::Tensor centroid;  // [D], unit norm
  int member_count = 0;
};

/// A fixed multi-scale edge detector. Implementations must be deterministic
/// and differentiable with respect to their input.
class EdgeBackbone {
 public:
  virtual ~EdgeBackbone() = default;
  /// gray: [N, 1, H, W] in [0, 1]; returns the five level maps.
  virtual std::array<torch::Tensor, kEdgeLevels> forward(const torch::Tensor& gray) const = 0;
  virtual std::string identifier() const = 0;
};

/// Default backbone: scale-normalized Gaussian-derivative gradient magnitude
/// on a dyadic pyramid. Level k is the input area-downsampled by 2^(k-1),
/// smoothed with `sigma` (in level pixels, so sigma doubles per level in input
/// pixels) and squashed as 1 - exp(-sigma * |grad| / tau).
class GradientPyramidBackbone final : public EdgeBackbone {
 public:
  explicit GradientPyramidBackbone(double sigma = 1.0, double tau = 0.1);
  std::array<torch::Tensor, kEdgeLevels> forward(const torch::Tensor& gray) const override;
  std::string identifier() const override;

 private:
  double sigma_;
  double tau_;
  std::vector<double> gaussian_;
};

/// Loads a TorchScript edge network (e.g. an exported HED) taking [N,3,H,W] in
/// [0,1] and returning five side outputs. Outputs are resized to the dyadic
/// level sizes and clamped to [0,1].
class ScriptedEdgeBackbone final : public EdgeBackbone {
 public:
  explicit ScriptedEdgeBackbone(const std::filesystem::path& path);
  ~ScriptedEdgeBackbone() override;
  std::array<torch::Tensor, kEdgeLevels> forward(const torch::Tensor& gray) const override;
  std::string identifier() const override;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

std::shared_ptr<EdgeBackbone> make_backbone(const std::string& identifier);

/// Spatial size of level k (1-based) for an H x W input.
std::pair<int, int> level_size(int k, int height, int width);

struct ExtractorOptions {
  int fuse_channels = 32;
  int encoder_channels = 32;
  int feature_dim = 128;
  // Average-pool grid ahead of the MLP; 1×1 is global average pooling.
  int pool_rows = 8;
  int pool_cols = 4;
};

/// Trainable part of the extractor: one refinement block per level and the
/// encoder (convolution block + one linear layer).
struct ExtractorNetImpl : torch::nn::Module {
  explicit ExtractorNetImpl(const ExtractorOptions& options);

  torch::nn::ModuleList refine{nullptr};
  torch::nn::Sequential encoder_conv{nullptr};
  torch::nn::Linear mlp{nullptr};
  ExtractorOptions options;
};
TORCH_MODULE(ExtractorNet);

/// Edge backbone (fixed) + fusion and encoder weights + level ablation set.
struct ExtractorModel {
  std::shared_ptr<EdgeBackbone> backbone;
  ExtractorNet net{nullptr};
  std::set<int> removed_levels;

  static ExtractorModel create(const ExtractorOptions& options, std::uint64_t init_seed,
                               std::shared_ptr<EdgeBackbone> backbone = nullptr);

  int feature_dim() const { return net->options.feature_dim; }

  /// Batched, differentiable edge features. images: [N, C, H, W] with C in {1, 3}.
  torch::Tensor features(const torch::Tensor& images) const;

  /// Deep copy of the trainable weights; the backbone is shared (it is immutable).
  ExtractorModel clone() const;

  /// Freeze/unfreeze every trainable parameter.
  void set_trainable(bool trainable) const;
};

EdgeMapStack detect_edges(const PersonImage& image, const EdgeBackbone& backbone);
EdgeMapStack detect_edges(const PersonImage& image);
EdgeMapStack detect_edges_batch(const torch::Tensor& images, const EdgeBackbone& backbone);

FusedEdgeMap fuse(const EdgeMapStack& stack, const ExtractorModel& model);

/// Batched encoder: [N, F, H, W] fused map -> [N, D] unit rows.
torch::Tensor encode_batch(const torch::Tensor& fused, const ExtractorModel& model);
EdgeFeature encode(const FusedEdgeMap& fused, const ExtractorModel& model);

EdgeFeature extract(const PersonImage& image, const ExtractorModel& model);
std::vector<EdgeFeature> extract_all(const std::vector<const PersonImage*>& images, const ExtractorModel& model,
                                     int batch_size = 32);

/// One centroid per (identity, modality), ordered by identity then modality.
std::vector<IdentityCentroid> cluster_features(const std::vector<EdgeFeature>& features);

/// Differentiable in-batch centroids: rows of `features` grouped by `group`
/// (values 0..groups-1), averaged and renormalized. Returns [groups, D].
torch::Tensor group_centroids(const torch::Tensor& features, const std::vector<int>& group, int groups);

/// Self-supervised objective over identity centroids. Row p of `visible` and
/// `infrared` belongs to identity p:
///   sum_p sum_{q != p} |V_p - I_p| - (|V_p - V_q| + |I_p - I_q|).
torch::Tensor extractor_loss(const torch::Tensor& visible, const torch::Tensor& infrared);
double extractor_loss(const std::vector<IdentityCentroid>& centroids, const std::vector<int>& batch);

struct ExtractorTrainConfig {
  TrainConfig train;
  ExtractorOptions options;
  std::string backbone = "gradient-pyramid";
};

void to_json(nlohmann::json& j, const ExtractorTrainConfig& c);
void from_json(const nlohmann::json& j, ExtractorTrainConfig& c);

struct ExtractorTrainResult {
  ExtractorModel model;
  TrainingCurve curve;
};

/// Minibatch SGD on extractor_loss. The backbone is never touched. The curve's
/// monitor is the cross-modal centroid margin on the training data (mean
/// different-identity distance minus mean same-identity distance).
ExtractorTrainResult train_extractor(const Dataset& dataset, const ExtractorTrainConfig& config);
ExtractorTrainResult train_extractor(const Dataset& dataset, const ExtractorTrainConfig& config,
                                     ExtractorModel initial);

/// Copy of `model` whose fusion substitutes zero maps for the given levels.
ExtractorModel ablate_levels(const ExtractorModel& model, const std::set<int>& removed);

void save_extractor(const ExtractorModel& model, const std::filesystem::path& path, const nlohmann::json& provenance);
/// Returns the model and the provenance block stored with it.
std::pair<ExtractorModel, nlohmann::json> load_extractor(const std::filesystem::path& path);

/// JSON-lines feature cache: {source_path, person_id, modality, vector}.
void write_feature_cache(const std::vector<EdgeFeature>& features, const std::filesystem::path& path);
std::vector<EdgeFeature> read_feature_cache(const std::filesystem::path& path);

}  // namespace edgeattack
