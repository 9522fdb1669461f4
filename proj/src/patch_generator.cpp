#include "edgeattack/patch_generator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>

#include <ATen/CPUGeneratorImpl.h>
#include <c10/util/Logging.h>

#include "edgeattack/checkpoint.hpp"
#include "edgeattack/common.hpp"

namespace F = torch::nn::functional;
namespace fs = std::filesystem;

namespace edgeattack {

// ---------------------------------------------------------------------------
// Placement
// ---------------------------------------------------------------------------

void PatchPlacement::validate() const {
  constexpr double eps = 1e-12;
  for (int a = 0; a < 2; ++a) {
    const double c = center[static_cast<std::size_t>(a)];
    const double s = size[static_cast<std::size_t>(a)];
    if (!(c > 0.0 && c < 1.0 && s > 0.0 && s < 1.0)) {
      throw ConfigError("patch placement fractions must lie in (0,1)");
    }
    if (c - s / 2 < -eps || c + s / 2 > 1.0 + eps) throw ConfigError("patch placement rectangle leaves the image");
  }
}

void to_json(nlohmann::json& j, const PatchPlacement& p) { j = nlohmann::json{{"center", p.center}, {"size", p.size}}; }

void from_json(const nlohmann::json& j, PatchPlacement& p) {
  p.center = j.value("center", p.center);
  p.size = j.value("size", p.size);
}

PixelRect resolve_placement(const PatchPlacement& placement, int height, int width) {
  PixelRect r;
  r.width = std::clamp(static_cast<int>(std::floor(placement.size[0] * width)), 1, width);
  r.height = std::clamp(static_cast<int>(std::floor(placement.size[1] * height)), 1, height);
  r.x0 = static_cast<int>(std::floor(placement.center[0] * width - r.width / 2.0));
  r.y0 = static_cast<int>(std::floor(placement.center[1] * height - r.height / 2.0));
  r.x0 = std::clamp(r.x0, 0, width - r.width);
  r.y0 = std::clamp(r.y0, 0, height - r.height);
  return r;
}

// ---------------------------------------------------------------------------
// Network
// ---------------------------------------------------------------------------

TransformerBlockImpl::TransformerBlockImpl(int embed_dim, int heads_, int mlp_ratio) : heads(heads_) {
  namespace nn = torch::nn;
  if (embed_dim % heads != 0) throw ConfigError("generator embed_dim must be divisible by heads");
  norm1 = register_module("norm1", nn::LayerNorm(nn::LayerNormOptions({embed_dim})));
  qkv = register_module("qkv", nn::Linear(embed_dim, 3 * embed_dim));
  proj = register_module("proj", nn::Linear(embed_dim, embed_dim));
  norm2 = register_module("norm2", nn::LayerNorm(nn::LayerNormOptions({embed_dim})));
  mlp = register_module("mlp", nn::Sequential(nn::Linear(embed_dim, mlp_ratio * embed_dim), nn::GELU(),
                                              nn::Linear(mlp_ratio * embed_dim, embed_dim)));
}

torch::Tensor TransformerBlockImpl::forward(const torch::Tensor& x) {
  const auto N = x.size(0);
  const auto T = x.size(1);
  const auto E = x.size(2);
  const auto d = E / heads;
  auto q_k_v = qkv->forward(norm1->forward(x)).view({N, T, 3, heads, d}).permute({2, 0, 3, 1, 4});
  auto q = q_k_v[0], k = q_k_v[1], v = q_k_v[2];  // [N, heads, T, d]
  auto attn = torch::softmax(torch::matmul(q, k.transpose(-2, -1)) / std::sqrt(static_cast<double>(d)), -1);
  auto y = torch::matmul(attn, v).transpose(1, 2).reshape({N, T, E});
  auto h = x + proj->forward(y);
  return h + mlp->forward(norm2->forward(h));
}

GeneratorNetImpl::GeneratorNetImpl(const GeneratorOptions& opts) : options(opts) {
  namespace nn = torch::nn;
  const int E = opts.embed_dim;
  const int T = opts.grid * opts.grid;
  mlp1 = register_module("mlp1", nn::Sequential(nn::Linear(opts.z_dim + opts.feature_dim, E), nn::GELU(),
                                                nn::Linear(E, E)));
  mlp2 = register_module("mlp2", nn::Linear(E, E));
  position = register_parameter("position", torch::randn({T, E}) * 0.5);
  position_mod = register_module("position_mod", nn::Linear(E, E));
  decoder = register_module("decoder", nn::ModuleList());
  for (int b = 0; b < opts.blocks; ++b) decoder->push_back(TransformerBlock(E, opts.heads, opts.mlp_ratio));
  out_norm = register_module("out_norm", nn::LayerNorm(nn::LayerNormOptions({E})));
  to_pixels = register_module("to_pixels", nn::Linear(E, 3 * opts.token_size * opts.token_size));
  // Start close to a flat mid-gray patch.
  torch::NoGradGuard guard;
  to_pixels->weight.normal_(0.0, 0.01);
  to_pixels->bias.zero_();
}

torch::Tensor GeneratorNetImpl::forward(const torch::Tensor& z, const torch::Tensor& y) {
  const auto N = z.size(0);
  const int g = options.grid;
  const int p = options.token_size;
  auto h = mlp1->forward(torch::cat({z, y}, 1));                                          // [N, E]
  auto pe = position.unsqueeze(0) * (1.0 + position_mod->forward(h).unsqueeze(1));        // [N, T, E]
  auto x = mlp2->forward(h).unsqueeze(1) + pe;
  for (const auto& block : *decoder) x = block->as<TransformerBlockImpl>()->forward(x);
  auto tiles = to_pixels->forward(out_norm->forward(x));                                  // [N, T, 3*p*p]
  tiles = tiles.view({N, g, g, 3, p, p}).permute({0, 3, 1, 4, 2, 5}).reshape({N, 3, g * p, g * p});
  return torch::sigmoid(tiles);
}

GeneratorModel GeneratorModel::create(const GeneratorOptions& options, std::uint64_t init_seed) {
  torch::manual_seed(init_seed);
  GeneratorModel m;
  m.net = GeneratorNet(options);
  return m;
}

torch::Tensor sample_latent(int z_dim, std::uint64_t z_seed) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(z_seed);
  return torch::randn({z_dim}, gen, torch::kFloat32);
}

AdversarialPatch generate_patch(const EdgeFeature& feature, const GeneratorModel& model, std::uint64_t z_seed) {
  const auto& opts = model.options();
  if (!feature.vector.defined() || feature.vector.dim() != 1 || feature.vector.size(0) != opts.feature_dim) {
    throw Error("conditioning dimension mismatch: generator expects " + std::to_string(opts.feature_dim) +
                "-dim features");
  }
  torch::NoGradGuard guard;
  GeneratorNet net = model.net;
  const auto dtype = net->position.scalar_type();
  auto z = sample_latent(opts.z_dim, z_seed).to(dtype).unsqueeze(0);
  AdversarialPatch patch;
  patch.pixels = net->forward(z, feature.vector.to(dtype).unsqueeze(0)).squeeze(0).to(torch::kFloat32).contiguous();
  patch.placement = model.placement;
  patch.condition_id = feature.person_id.value_or(-1);
  patch.z_seed = z_seed;
  return patch;
}

// ---------------------------------------------------------------------------
// Compositing
// ---------------------------------------------------------------------------

torch::Tensor apply_patch_batch(const torch::Tensor& images, const torch::Tensor& patches,
                                const PatchPlacement& placement) {
  if (images.dim() != 4 || images.size(1) != 3) throw Error("patch applies to visible images only");
  const int H = static_cast<int>(images.size(2));
  const int W = static_cast<int>(images.size(3));
  const auto r = resolve_placement(placement, H, W);
  auto resized = F::interpolate(patches.to(images.scalar_type()), F::InterpolateFuncOptions()
                                                                      .size(std::vector<int64_t>{r.height, r.width})
                                                                      .mode(torch::kBilinear)
                                                                      .align_corners(false))
                     .clamp(0.0, 1.0);
  if (resized.size(0) == 1 && images.size(0) != 1) resized = resized.expand({images.size(0), -1, -1, -1});
  auto out = images.clone();
  out.slice(2, r.y0, r.y0 + r.height).slice(3, r.x0, r.x0 + r.width).copy_(resized);
  return out;
}

PersonImage apply_patch(const PersonImage& image, const AdversarialPatch& patch) {
  if (image.modality != Modality::Visible) throw Error("patch applies to visible images only");
  patch.placement.validate();
  PersonImage out = image;
  torch::NoGradGuard guard;
  out.pixels = apply_patch_batch(image.pixels.unsqueeze(0), patch.pixels.unsqueeze(0), patch.placement).squeeze(0);
  return out;
}

// ---------------------------------------------------------------------------
// Objective
// ---------------------------------------------------------------------------

torch::Tensor generator_loss(const torch::Tensor& patched_visible, const torch::Tensor& infrared) {
  if (patched_visible.sizes() != infrared.sizes() || patched_visible.dim() != 2) {
    throw Error("centroid sets differ: shapes do not match");
  }
  return (patched_visible - infrared).norm(2, 1).mean();
}

double generator_loss(const std::vector<IdentityCentroid>& patched_visible,
                      const std::vector<IdentityCentroid>& infrared) {
  std::map<int, torch::Tensor> v, r;
  for (const auto& c : patched_visible) v[c.person_id] = c.centroid;
  for (const auto& c : infrared) r[c.person_id] = c.centroid;
  if (v.size() != patched_visible.size() || r.size() != infrared.size() || v.size() != r.size()) {
    throw Error("centroid sets differ");
  }
  if (v.empty()) throw Error("centroid sets differ: empty");
  std::vector<torch::Tensor> a, b;
  for (const auto& [pid, c] : v) {
    auto it = r.find(pid);
    if (it == r.end()) throw Error("centroid sets differ: identity " + std::to_string(pid) + " has no infrared centroid");
    a.push_back(c.to(torch::kFloat64));
    b.push_back(it->second.to(torch::kFloat64));
  }
  return generator_loss(torch::stack(a), torch::stack(b)).item<double>();
}

torch::Tensor total_variation(const torch::Tensor& patches) {
  using torch::indexing::Slice;
  auto dx = (patches.index({Slice(), Slice(), Slice(), Slice(1, torch::indexing::None)}) -
             patches.index({Slice(), Slice(), Slice(), Slice(0, -1)}))
                .abs()
                .mean();
  auto dy = (patches.index({Slice(), Slice(), Slice(1, torch::indexing::None), Slice()}) -
             patches.index({Slice(), Slice(), Slice(0, -1), Slice()}))
                .abs()
                .mean();
  return dx + dy;
}

torch::Tensor generator_objective(const GeneratorModel& model, const ExtractorModel& extractor,
                                  const torch::Tensor& z, const torch::Tensor& conditions,
                                  const torch::Tensor& visible, const std::vector<int>& visible_group,
                                  const torch::Tensor& infrared_centroids, double tv_weight) {
  GeneratorNet net = model.net;
  const auto P = conditions.size(0);
  auto patches = net->forward(z, conditions);
  auto which = torch::tensor(std::vector<int64_t>(visible_group.begin(), visible_group.end()), torch::kLong);
  auto patched = apply_patch_batch(visible, patches.index_select(0, which), model.placement);
  auto cents = group_centroids(extractor.features(patched), visible_group, static_cast<int>(P));
  auto loss = -generator_loss(cents, infrared_centroids);
  if (tv_weight != 0.0) loss = loss + tv_weight * total_variation(patches);
  return loss;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

void to_json(nlohmann::json& j, const GeneratorTrainConfig& c) {
  j = nlohmann::json{{"train", c.train},
                     {"z_dim", c.options.z_dim},
                     {"embed_dim", c.options.embed_dim},
                     {"blocks", c.options.blocks},
                     {"heads", c.options.heads},
                     {"grid", c.options.grid},
                     {"token_size", c.options.token_size},
                     {"mlp_ratio", c.options.mlp_ratio},
                     {"placement", c.placement},
                     {"tv_weight", c.tv_weight},
                     {"validation_z_seed", c.validation_z_seed}};
}

void from_json(const nlohmann::json& j, GeneratorTrainConfig& c) {
  if (j.contains("train")) {
    // Missing keys keep the generator's own defaults, not TrainConfig's.
    nlohmann::json base = c.train;
    base.merge_patch(j.at("train"));
    c.train = base.get<TrainConfig>();
  }
  c.options.z_dim = j.value("z_dim", c.options.z_dim);
  c.options.embed_dim = j.value("embed_dim", c.options.embed_dim);
  c.options.blocks = j.value("blocks", c.options.blocks);
  c.options.heads = j.value("heads", c.options.heads);
  c.options.grid = j.value("grid", c.options.grid);
  c.options.token_size = j.value("token_size", c.options.token_size);
  c.options.mlp_ratio = j.value("mlp_ratio", c.options.mlp_ratio);
  if (j.contains("placement")) c.placement = j.at("placement").get<PatchPlacement>();
  c.tv_weight = j.value("tv_weight", c.tv_weight);
  c.validation_z_seed = j.value("validation_z_seed", c.validation_z_seed);
}

std::map<int, torch::Tensor> identity_conditions(const std::vector<const PersonImage*>& images,
                                                 const ExtractorModel& extractor) {
  std::vector<const PersonImage*> visible;
  for (const auto* im : images) {
    if (im->modality == Modality::Visible) visible.push_back(im);
  }
  std::map<int, torch::Tensor> out;
  for (const auto& c : cluster_features(extract_all(visible, extractor))) out[c.person_id] = c.centroid;
  return out;
}

namespace {

void require_frozen(const ExtractorModel& extractor) {
  for (const auto& p : extractor.net->parameters()) {
    if (p.requires_grad()) throw std::logic_error("extractor not frozen during generator training");
  }
}

}  // namespace

GeneratorTrainResult train_generator(const Dataset& dataset, const ExtractorModel& extractor,
                                     const GeneratorTrainConfig& config) {
  auto opts = config.options;
  opts.feature_dim = extractor.feature_dim();
  auto model = GeneratorModel::create(opts, config.train.seed);
  model.placement = config.placement;
  return train_generator(dataset, extractor, config, model);
}

GeneratorTrainResult train_generator(const Dataset& dataset, const ExtractorModel& extractor,
                                     const GeneratorTrainConfig& config, GeneratorModel model) {
  config.placement.validate();
  model.placement = config.placement;
  if (model.options().feature_dim != extractor.feature_dim()) throw Error("conditioning dimension mismatch");
  require_frozen(extractor);
  const std::string extractor_hash = parameter_fingerprint(*extractor.net);
  const TrainConfig& tc = config.train;

  std::map<int, std::vector<int>> vis_rows, ir_rows;
  std::vector<const PersonImage*> vis_images, ir_images;
  for (const auto& im : dataset.images) {
    if (im.modality == Modality::Visible) {
      vis_rows[im.person_id].push_back(static_cast<int>(vis_images.size()));
      vis_images.push_back(&im);
    } else {
      ir_rows[im.person_id].push_back(static_cast<int>(ir_images.size()));
      ir_images.push_back(&im);
    }
  }
  std::vector<int> ids;
  for (int pid : dataset.identities) {
    if (vis_rows.contains(pid) && ir_rows.contains(pid)) ids.push_back(pid);
  }
  if (ids.empty()) throw Error("train_generator: no identity has both modalities");

  const auto visible = stack_pixels(vis_images, 3);
  torch::Tensor ir_features;
  std::map<int, torch::Tensor> conditions;
  {
    torch::NoGradGuard guard;
    std::vector<torch::Tensor> parts;
    const auto ir = stack_pixels(ir_images, 1);
    for (int64_t s = 0; s < ir.size(0); s += 32) parts.push_back(extractor.features(ir.slice(0, s, s + 32)));
    ir_features = torch::cat(parts);
    conditions = identity_conditions(vis_images, extractor);
  }
  auto ir_centroid = [&](int pid, const std::vector<int>& rows) {
    auto f = ir_features.index_select(0, torch::tensor(std::vector<int64_t>(rows.begin(), rows.end()), torch::kLong));
    return F::normalize(f.mean(0), F::NormalizeFuncOptions().p(2).dim(0).eps(1e-12));
  };

  // Fixed validation batch: every training identity, all its images, one z.
  auto validation_distance = [&]() {
    torch::NoGradGuard guard;
    std::vector<torch::Tensor> cond, irc;
    std::vector<int64_t> rows;
    std::vector<int> group;
    for (std::size_t s = 0; s < ids.size(); ++s) {
      cond.push_back(conditions.at(ids[s]));
      irc.push_back(ir_centroid(ids[s], ir_rows.at(ids[s])));
      for (int r : vis_rows.at(ids[s])) rows.push_back(r), group.push_back(static_cast<int>(s));
    }
    const auto P = static_cast<int64_t>(ids.size());
    auto z = sample_latent(model.options().z_dim, config.validation_z_seed).unsqueeze(0).expand({P, -1});
    auto v = visible.index_select(0, torch::tensor(rows, torch::kLong));
    return -generator_objective(model, extractor, z, torch::stack(cond), v, group, torch::stack(irc), 0.0)
                .item<double>();
  };

  model.net->train();
  auto optimizer = make_optimizer(tc, model.net->parameters());
  std::mt19937_64 rng(tc.seed ^ 0x9a7c4e5dULL);
  auto zgen = at::make_generator<at::CPUGeneratorImpl>(tc.seed ^ 0x2a11ce5ULL);
  const int k = std::max(1, tc.images_per_id);
  std::size_t max_group = 0;
  for (int pid : ids) max_group = std::max(max_group, vis_rows.at(pid).size());
  const int rounds = static_cast<int>((max_group + static_cast<std::size_t>(k) - 1) / static_cast<std::size_t>(k));

  GeneratorTrainResult result{model, {}};
  result.curve.monitor_name = "patched_distance";
  result.curve.epochs.push_back({0, 0.0, validation_distance()});
  bool warned_constant = false;
  for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
    std::vector<int> order = ids;
    std::shuffle(order.begin(), order.end(), rng);
    std::map<int, std::vector<int>> vis_order, ir_order;
    for (int pid : order) {
      vis_order[pid] = vis_rows.at(pid);
      ir_order[pid] = ir_rows.at(pid);
      std::shuffle(vis_order[pid].begin(), vis_order[pid].end(), rng);
      std::shuffle(ir_order[pid].begin(), ir_order[pid].end(), rng);
    }
    double loss_sum = 0.0;
    int steps = 0;
    for (int round = 0; round < rounds; ++round) {
      for (std::size_t s = 0; s < order.size(); s += static_cast<std::size_t>(std::max(1, tc.ids_per_batch))) {
        const auto end = std::min(order.size(), s + static_cast<std::size_t>(std::max(1, tc.ids_per_batch)));
        std::vector<torch::Tensor> cond, irc;
        std::vector<int64_t> rows;
        std::vector<int> group;
        for (std::size_t b = s; b < end; ++b) {
          const int pid = order[b];
          const int slot = static_cast<int>(b - s);
          cond.push_back(conditions.at(pid));
          const auto& v = vis_order[pid];
          const auto& r = ir_order[pid];
          std::vector<int> ir_pick;
          for (int j = 0; j < k; ++j) {
            rows.push_back(v[static_cast<std::size_t>(round * k + j) % v.size()]);
            group.push_back(slot);
            ir_pick.push_back(r[static_cast<std::size_t>(round * k + j) % r.size()]);
          }
          irc.push_back(ir_centroid(pid, ir_pick));
        }
        const auto P = static_cast<int64_t>(cond.size());
        auto z = torch::randn({P, model.options().z_dim}, zgen, torch::kFloat32);
        auto loss = generator_objective(model, extractor, z, torch::stack(cond),
                                        visible.index_select(0, torch::tensor(rows, torch::kLong)), group,
                                        torch::stack(irc), config.tv_weight);
        const double value = loss.item<double>();
        if (!std::isfinite(value)) {
          if (tc.divergence_checkpoint) save_generator(model, *tc.divergence_checkpoint, {{"diverged_at_epoch", epoch}});
          throw TrainingDiverged("training diverged: non-finite generator loss at epoch " + std::to_string(epoch));
        }
        // An extractor with every edge level removed ignores its input, so the
        // patch has no influence on the objective.
        if (loss.requires_grad()) {
          optimizer->zero_grad();
          loss.backward();
          optimizer->step();
        } else if (!warned_constant) {
          LOG(WARNING) << "generator objective does not depend on the patch; parameters stay fixed";
          warned_constant = true;
        }
        loss_sum += value;
        ++steps;
      }
    }
    result.curve.epochs.push_back({epoch, loss_sum / std::max(1, steps), validation_distance()});
    VLOG(1) << "generator epoch " << epoch << " loss " << result.curve.epochs.back().loss << " distance "
            << result.curve.epochs.back().monitor;
  }
  require_frozen(extractor);
  if (parameter_fingerprint(*extractor.net) != extractor_hash) {
    throw std::logic_error("extractor parameters changed during generator training");
  }
  model.net->eval();
  result.model = model;
  return result;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

void save_generator(const GeneratorModel& model, const fs::path& path, const nlohmann::json& provenance) {
  const auto& o = model.options();
  nlohmann::json meta{{"kind", "generator"},
                      {"feature_dim", o.feature_dim},
                      {"z_dim", o.z_dim},
                      {"embed_dim", o.embed_dim},
                      {"blocks", o.blocks},
                      {"heads", o.heads},
                      {"grid", o.grid},
                      {"token_size", o.token_size},
                      {"mlp_ratio", o.mlp_ratio},
                      {"placement", model.placement},
                      {"parameter_fingerprint", parameter_fingerprint(*model.net)},
                      {"provenance", provenance}};
  save_checkpoint(*model.net, meta, path);
}

std::pair<GeneratorModel, nlohmann::json> load_generator(const fs::path& path) {
  const auto meta = read_checkpoint_meta(path);
  if (meta.value("kind", "") != "generator") throw Error("bad checkpoint: not a generator: " + path.string());
  GeneratorOptions o;
  o.feature_dim = meta.at("feature_dim");
  o.z_dim = meta.at("z_dim");
  o.embed_dim = meta.at("embed_dim");
  o.blocks = meta.at("blocks");
  o.heads = meta.at("heads");
  o.grid = meta.at("grid");
  o.token_size = meta.at("token_size");
  o.mlp_ratio = meta.at("mlp_ratio");
  auto model = GeneratorModel::create(o, 0);
  load_checkpoint_parameters(*model.net, path);
  model.placement = meta.at("placement").get<PatchPlacement>();
  model.net->eval();
  return {model, meta.value("provenance", nlohmann::json::object())};
}

void export_patch(const AdversarialPatch& patch, const fs::path& dir, const std::string& stem) {
  fs::create_directories(dir);
  write_png(patch.pixels, dir / (stem + ".png"));
  nlohmann::json j{{"image", stem + ".png"},
                   {"height", patch.pixels.size(1)},
                   {"width", patch.pixels.size(2)},
                   {"placement", patch.placement},
                   {"condition_id", patch.condition_id},
                   {"z_seed", patch.z_seed}};
  std::ofstream out(dir / (stem + ".json"));
  if (!out) throw Error("cannot write patch sidecar in " + dir.string());
  out << j.dump(2) << "\n";
}

AdversarialPatch import_patch(const fs::path& json_path) {
  std::ifstream in(json_path);
  if (!in) throw DependencyMissing("patch sidecar not found: " + json_path.string());
  const auto j = nlohmann::json::parse(in);
  AdversarialPatch p;
  p.placement = j.at("placement").get<PatchPlacement>();
  p.condition_id = j.at("condition_id");
  p.z_seed = j.at("z_seed");
  const ImageSize size{j.at("height").get<int>(), j.at("width").get<int>()};
  p.pixels = read_image(json_path.parent_path() / j.at("image").get<std::string>(), Modality::Visible, size);
  return p;
}

}  // namespace edgeattack
