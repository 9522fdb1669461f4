#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "edgeattack/dataset.hpp"
#include "edgeattack/edge_extractor.hpp"
#include "edgeattack/training.hpp"

namespace edgeattack {

/// Patch rectangle in image-relative coordinates: center and size as
/// (fraction of width, fraction of height).
struct PatchPlacement {
  std::array<double, 2> center{0.5, 0.45};
  std::array<double, 2> size{0.40, 0.30};

  /// Throws ConfigError unless every fraction is in (0,1) and the rectangle
  /// fits inside the unit square.
  void validate() const;
};

void to_json(nlohmann::json& j, const PatchPlacement& p);
void from_json(const nlohmann::json& j, PatchPlacement& p);

struct PixelRect {
  int x0 = 0;
  int y0 = 0;
  int width = 0;
  int height = 0;
};

/// Pixel rectangle for an H x W image: width = floor(sw*W), height = floor(sh*H),
/// top-left at floor(center - size/2), shifted to stay inside the image.
PixelRect resolve_placement(const PatchPlacement& placement, int height, int width);

/// pixels: float32 [3, h_p, w_p] in [0, 1].
struct AdversarialPatch {
  torch::Tensor pixels;
  PatchPlacement placement;
  int condition_id = -1;
  std::uint64_t z_seed = 0;
};

struct GeneratorOptions {
  int feature_dim = 128;
  int z_dim = 64;
  int embed_dim = 128;
  int blocks = 4;
  int heads = 4;
  int grid = 8;        // tokens per side
  int token_size = 8;  // pixels per token side
  int mlp_ratio = 2;

  int patch_size() const { return grid * token_size; }
};

struct TransformerBlockImpl : torch::nn::Module {
  TransformerBlockImpl(int embed_dim, int heads, int mlp_ratio);
  torch::Tensor forward(const torch::Tensor& x);

  int heads;
  torch::nn::LayerNorm norm1{nullptr};
  torch::nn::Linear qkv{nullptr};
  torch::nn::Linear proj{nullptr};
  torch::nn::LayerNorm norm2{nullptr};
  torch::nn::Sequential mlp{nullptr};
};
TORCH_MODULE(TransformerBlock);

/// ViT-style conditional generator:
///   h = MLP1([z, y]);  tokens = MLP2(h) + PE(h);  patch = sigmoid(Decoder(tokens))
/// PE(h) modulates a learned position table by h. Each output token is
/// projected to a token_size x token_size RGB tile.
struct GeneratorNetImpl : torch::nn::Module {
  explicit GeneratorNetImpl(const GeneratorOptions& options);
  /// z: [N, z_dim], y: [N, feature_dim] -> [N, 3, S, S] in [0, 1].
  torch::Tensor forward(const torch::Tensor& z, const torch::Tensor& y);

  GeneratorOptions options;
  torch::nn::Sequential mlp1{nullptr};
  torch::nn::Linear mlp2{nullptr};
  torch::Tensor position;  // [T, E]
  torch::nn::Linear position_mod{nullptr};
  torch::nn::ModuleList decoder{nullptr};
  torch::nn::LayerNorm out_norm{nullptr};
  torch::nn::Linear to_pixels{nullptr};
};
TORCH_MODULE(GeneratorNet);

struct GeneratorModel {
  GeneratorNet net{nullptr};
  PatchPlacement placement;

  static GeneratorModel create(const GeneratorOptions& options, std::uint64_t init_seed);
  const GeneratorOptions& options() const { return net->options; }
};

/// z ~ N(0, I) drawn from its own generator seeded with z_seed.
torch::Tensor sample_latent(int z_dim, std::uint64_t z_seed);

AdversarialPatch generate_patch(const EdgeFeature& feature, const GeneratorModel& model, std::uint64_t z_seed);

/// Replacement compositing onto a VISIBLE image; pixels outside the placement
/// rectangle are untouched.
PersonImage apply_patch(const PersonImage& image, const AdversarialPatch& patch);

/// Batched, differentiable form: images [N, C, H, W], patches [N, 3, h, w]
/// (or [1, 3, h, w] broadcast to every image).
torch::Tensor apply_patch_batch(const torch::Tensor& images, const torch::Tensor& patches,
                                const PatchPlacement& placement);

/// Mean over identities of |V'_p - I_p|; row p of both tensors is identity p.
torch::Tensor generator_loss(const torch::Tensor& patched_visible, const torch::Tensor& infrared);
double generator_loss(const std::vector<IdentityCentroid>& patched_visible,
                      const std::vector<IdentityCentroid>& infrared);

struct GeneratorTrainConfig {
  TrainConfig train = [] {
    TrainConfig t;
    t.optimizer = "adam";
    t.epochs = 40;
    t.learning_rate = 1e-3;
    return t;
  }();
  GeneratorOptions options;
  PatchPlacement placement;
  double tv_weight = 0.0;
  std::uint64_t validation_z_seed = 0;
};

void to_json(nlohmann::json& j, const GeneratorTrainConfig& c);
void from_json(const nlohmann::json& j, GeneratorTrainConfig& c);

struct GeneratorTrainResult {
  GeneratorModel model;
  TrainingCurve curve;  // monitor: patched-vs-infrared distance on the training identities
};

/// Conditioning vector of each identity: the renormalized mean edge feature of
/// its clean visible images.
std::map<int, torch::Tensor> identity_conditions(const std::vector<const PersonImage*>& images,
                                                 const ExtractorModel& extractor);

/// Trains against the frozen extractor, ascending the patched/infrared centroid
/// distance. Throws std::logic_error if the extractor is trainable or changes.
GeneratorTrainResult train_generator(const Dataset& dataset, const ExtractorModel& extractor,
                                     const GeneratorTrainConfig& config);
GeneratorTrainResult train_generator(const Dataset& dataset, const ExtractorModel& extractor,
                                     const GeneratorTrainConfig& config, GeneratorModel initial);

/// Objective used by the trainer on one batch: the negated mean distance plus
/// the optional TV penalty. Exposed for gradient checks.
torch::Tensor generator_objective(const GeneratorModel& model, const ExtractorModel& extractor,
                                  const torch::Tensor& z, const torch::Tensor& conditions,
                                  const torch::Tensor& visible, const std::vector<int>& visible_group,
                                  const torch::Tensor& infrared_centroids, double tv_weight);

/// Anisotropic total variation, mean over pixels.
torch::Tensor total_variation(const torch::Tensor& patches);

void save_generator(const GeneratorModel& model, const std::filesystem::path& path, const nlohmann::json& provenance);
std::pair<GeneratorModel, nlohmann::json> load_generator(const std::filesystem::path& path);

/// Writes `<stem>.png` and `<stem>.json` (placement, condition_id, z_seed, size).
void export_patch(const AdversarialPatch& patch, const std::filesystem::path& dir, const std::string& stem);
AdversarialPatch import_patch(const std::filesystem::path& json_path);

}  // namespace edgeattack
