#include "edgeattack/edge_extractor.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>

#include <c10/util/Logging.h>
#include <torch/script.h>

#include "edgeattack/checkpoint.hpp"

namespace F = torch::nn::functional;
namespace fs = std::filesystem;

namespace edgeattack {

// ---------------------------------------------------------------------------
// Backbones
// ---------------------------------------------------------------------------

std::pair<int, int> level_size(int k, int height, int width) {
  const int f = 1 << (k - 1);
  return {std::max(1, height / f), std::max(1, width / f)};
}

GradientPyramidBackbone::GradientPyramidBackbone(double sigma, double tau) : sigma_(sigma), tau_(tau) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    gaussian_.push_back(std::exp(-0.5 * i * i / (sigma * sigma)));
    total += gaussian_.back();
  }
  for (auto& g : gaussian_) g /= total;
}

std::array<torch::Tensor, kEdgeLevels> GradientPyramidBackbone::forward(const torch::Tensor& gray) const {
  TORCH_CHECK(gray.dim() == 4 && gray.size(1) == 1, "backbone expects [N,1,H,W]");
  const auto radius = static_cast<int64_t>(gaussian_.size() / 2);
  const auto K = static_cast<int64_t>(gaussian_.size());
  auto g = torch::tensor(gaussian_, gray.options());
  auto kx = g.view({1, 1, 1, K});
  auto ky = g.view({1, 1, K, 1});
  const int H = static_cast<int>(gray.size(2));
  const int W = static_cast<int>(gray.size(3));

  std::array<torch::Tensor, kEdgeLevels> out;
  for (int k = 1; k <= kEdgeLevels; ++k) {
    torch::Tensor x = gray;
    if (k > 1) {
      const auto [h, w] = level_size(k, H, W);
      x = F::adaptive_avg_pool2d(gray, F::AdaptiveAvgPool2dFuncOptions({h, w}));
    }
    x = F::conv2d(F::pad(x, F::PadFuncOptions({radius, radius, 0, 0}).mode(torch::kReplicate)), kx);
    x = F::conv2d(F::pad(x, F::PadFuncOptions({0, 0, radius, radius}).mode(torch::kReplicate)), ky);
    auto p = F::pad(x, F::PadFuncOptions({1, 1, 1, 1}).mode(torch::kReplicate));
    using torch::indexing::Slice;
    auto gx = 0.5 * (p.index({Slice(), Slice(), Slice(1, -1), Slice(2, torch::indexing::None)}) -
                     p.index({Slice(), Slice(), Slice(1, -1), Slice(0, -2)}));
    auto gy = 0.5 * (p.index({Slice(), Slice(), Slice(2, torch::indexing::None), Slice(1, -1)}) -
                     p.index({Slice(), Slice(), Slice(0, -2), Slice(1, -1)}));
    auto magnitude = torch::sqrt(gx * gx + gy * gy + 1e-12) - 1e-6;
    out[static_cast<std::size_t>(k - 1)] = 1.0 - torch::exp(-(sigma_ / tau_) * magnitude.clamp_min(0.0));
  }
  return out;
}

std::string GradientPyramidBackbone::identifier() const {
  char buf[96];
  std::snprintf(buf, sizeof(buf), "gradient-pyramid:sigma=%g:tau=%g", sigma_, tau_);
  return buf;
}

struct ScriptedEdgeBackbone::Impl {
  fs::path path;
  mutable torch::jit::script::Module module;
};

ScriptedEdgeBackbone::ScriptedEdgeBackbone(const fs::path& path) : impl_(std::make_unique<Impl>()) {
  if (!fs::exists(path)) throw DependencyMissing("edge backbone weights not found: " + path.string());
  impl_->path = path;
  impl_->module = torch::jit::load(path.string());
  impl_->module.eval();
  for (auto p : impl_->module.parameters()) p.set_requires_grad(false);
}

ScriptedEdgeBackbone::~ScriptedEdgeBackbone() = default;

std::array<torch::Tensor, kEdgeLevels> ScriptedEdgeBackbone::forward(const torch::Tensor& gray) const {
  const int H = static_cast<int>(gray.size(2));
  const int W = static_cast<int>(gray.size(3));
  auto result = impl_->module.forward({gray.expand({-1, 3, -1, -1})});
  std::vector<torch::Tensor> sides;
  if (result.isTuple()) {
    for (const auto& v : result.toTuple()->elements()) sides.push_back(v.toTensor());
  } else if (result.isList()) {
    for (const auto& v : result.toList()) sides.push_back(v.get().toTensor());
  } else {
    throw Error("scripted edge backbone must return a tuple or list of side outputs");
  }
  if (sides.size() < kEdgeLevels) throw Error("scripted edge backbone returned fewer than five side outputs");
  std::array<torch::Tensor, kEdgeLevels> out;
  for (int k = 1; k <= kEdgeLevels; ++k) {
    const auto [h, w] = level_size(k, H, W);
    auto s = sides[static_cast<std::size_t>(k - 1)].to(gray.dtype());
    s = F::interpolate(s, F::InterpolateFuncOptions()
                              .size(std::vector<int64_t>{h, w})
                              .mode(torch::kBilinear)
                              .align_corners(false));
    out[static_cast<std::size_t>(k - 1)] = s.clamp(0.0, 1.0);
  }
  return out;
}

std::string ScriptedEdgeBackbone::identifier() const { return "torchscript:" + impl_->path.string(); }

std::shared_ptr<EdgeBackbone> make_backbone(const std::string& identifier) {
  if (identifier == "gradient-pyramid") return std::make_shared<GradientPyramidBackbone>();
  if (identifier.rfind("gradient-pyramid:", 0) == 0) {
    double sigma = 1.0, tau = 0.1;
    if (std::sscanf(identifier.c_str(), "gradient-pyramid:sigma=%lf:tau=%lf", &sigma, &tau) != 2) {
      throw ConfigError("bad backbone identifier '" + identifier + "'");
    }
    return std::make_shared<GradientPyramidBackbone>(sigma, tau);
  }
  if (identifier.rfind("torchscript:", 0) == 0) {
    return std::make_shared<ScriptedEdgeBackbone>(identifier.substr(std::string("torchscript:").size()));
  }
  throw ConfigError("unknown edge backbone '" + identifier + "'");
}

// ---------------------------------------------------------------------------
// Network
// ---------------------------------------------------------------------------

ExtractorNetImpl::ExtractorNetImpl(const ExtractorOptions& opts) : options(opts) {
  namespace nn = torch::nn;
  const int Fc = opts.fuse_channels;
  refine = register_module("refine", nn::ModuleList());
  for (int k = 0; k < kEdgeLevels; ++k) {
    refine->push_back(nn::Sequential(nn::Conv2d(nn::Conv2dOptions(1, Fc, 3).stride(2).padding(1)), nn::ReLU(),
                                     nn::Conv2d(nn::Conv2dOptions(Fc, Fc, 3).padding(1))));
  }
  const int C = opts.encoder_channels;
  encoder_conv = register_module(
      "encoder_conv", nn::Sequential(nn::Conv2d(nn::Conv2dOptions(Fc, C, 3).stride(2).padding(1)), nn::ReLU(),
                                     nn::Conv2d(nn::Conv2dOptions(C, C, 3).stride(2).padding(1)), nn::ReLU()));
  mlp = register_module("mlp", nn::Linear(C * opts.pool_rows * opts.pool_cols, opts.feature_dim));
}

ExtractorModel ExtractorModel::create(const ExtractorOptions& options, std::uint64_t init_seed,
                                      std::shared_ptr<EdgeBackbone> backbone) {
  ExtractorModel m;
  m.backbone = backbone ? std::move(backbone) : std::make_shared<GradientPyramidBackbone>();
  torch::manual_seed(init_seed);
  m.net = ExtractorNet(options);
  return m;
}

torch::Tensor ExtractorModel::features(const torch::Tensor& images) const {
  auto stack = detect_edges_batch(images, *backbone);
  return encode_batch(fuse(stack, *this).u, *this);
}

ExtractorModel ExtractorModel::clone() const {
  ExtractorModel m;
  m.backbone = backbone;
  m.removed_levels = removed_levels;
  m.net = ExtractorNet(net->options);
  m.net->to(net->parameters().front().scalar_type());
  {
    torch::NoGradGuard guard;
    auto dst = m.net->named_parameters();
    for (const auto& p : net->named_parameters()) dst[p.key()].copy_(p.value());
  }
  if (!net->is_training()) m.net->eval();
  for (auto& p : m.net->parameters()) p.set_requires_grad(net->parameters().front().requires_grad());
  return m;
}

void ExtractorModel::set_trainable(bool trainable) const {
  for (auto& p : net->parameters()) p.set_requires_grad(trainable);
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

EdgeMapStack detect_edges_batch(const torch::Tensor& images, const EdgeBackbone& backbone) {
  TORCH_CHECK(images.dim() == 4, "detect_edges expects [N,C,H,W]");
  const int H = static_cast<int>(images.size(2));
  const int W = static_cast<int>(images.size(3));
  if (H < 16 || W < 16) throw Error("input below minimum resolution: need at least 16x16");
  EdgeMapStack stack;
  stack.levels = backbone.forward(to_gray(images));
  stack.input_height = H;
  stack.input_width = W;
  return stack;
}

EdgeMapStack detect_edges(const PersonImage& image, const EdgeBackbone& backbone) {
  return detect_edges_batch(image.pixels.unsqueeze(0), backbone);
}

EdgeMapStack detect_edges(const PersonImage& image) {
  static const GradientPyramidBackbone backbone;
  return detect_edges(image, backbone);
}

FusedEdgeMap fuse(const EdgeMapStack& stack, const ExtractorModel& model) {
  const int H = stack.input_height;
  const int W = stack.input_width;
  // Post-convolution size of each level (3x3, stride 2, padding 1).
  auto conv_size = [&](int k) {
    const auto [h, w] = level_size(k, H, W);
    return std::vector<int64_t>{(h + 1) / 2, (w + 1) / 2};
  };
  torch::Tensor reference;
  for (const auto& l : stack.levels) {
    if (l.defined()) reference = l;
  }
  const int64_t N = reference.defined() ? reference.size(0) : 1;
  auto opts = model.net->parameters().front().options().requires_grad(false);
  const int64_t Fc = model.net->options.fuse_channels;

  ExtractorNet net = model.net;
  FusedEdgeMap out;
  const auto s5 = conv_size(kEdgeLevels);
  torch::Tensor u = torch::zeros({N, Fc, s5[0], s5[1]}, opts);  // u_0
  for (int i = 1; i <= kEdgeLevels; ++i) {
    const int k = kEdgeLevels + 1 - i;
    torch::Tensor contribution;
    if (model.removed_levels.contains(k)) {
      contribution = torch::zeros_like(u);
    } else {
      if (!stack.has_level(k)) throw Error("edge level L" + std::to_string(k) + " missing from stack");
      auto block = net->refine[static_cast<std::size_t>(k - 1)]->as<torch::nn::SequentialImpl>();
      contribution = block->forward(stack.levels[static_cast<std::size_t>(k - 1)]);
    }
    const std::vector<int64_t> target = i < kEdgeLevels ? conv_size(k - 1) : std::vector<int64_t>{H, W};
    u = F::interpolate(contribution + u,
                       F::InterpolateFuncOptions().size(target).mode(torch::kBilinear).align_corners(false));
    out.stage_outputs.push_back(u);
  }
  out.u = u;
  return out;
}

torch::Tensor encode_batch(const torch::Tensor& fused, const ExtractorModel& model) {
  if (fused.dim() != 4 || fused.size(1) != model.net->options.fuse_channels) {
    throw Error("model/input shape mismatch: fused map must be [N," + std::to_string(model.net->options.fuse_channels) +
                ",H,W]");
  }
  ExtractorNet net = model.net;
  auto h = net->encoder_conv->forward(fused);
  h = F::adaptive_avg_pool2d(h, F::AdaptiveAvgPool2dFuncOptions({net->options.pool_rows, net->options.pool_cols}))
          .flatten(1);
  return F::normalize(net->mlp->forward(h), F::NormalizeFuncOptions().p(2).dim(1).eps(1e-12));
}

EdgeFeature encode(const FusedEdgeMap& fused, const ExtractorModel& model) {
  EdgeFeature f;
  f.vector = encode_batch(fused.u, model).squeeze(0);
  return f;
}

EdgeFeature extract(const PersonImage& image, const ExtractorModel& model) {
  EdgeFeature f = encode(fuse(detect_edges(image, *model.backbone), model), model);
  f.person_id = image.person_id;
  f.modality = image.modality;
  f.source_path = image.source_path;
  return f;
}

std::vector<EdgeFeature> extract_all(const std::vector<const PersonImage*>& images, const ExtractorModel& model,
                                     int batch_size) {
  torch::NoGradGuard guard;
  std::vector<EdgeFeature> out;
  out.reserve(images.size());
  for (std::size_t start = 0; start < images.size(); start += static_cast<std::size_t>(batch_size)) {
    const auto end = std::min(images.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<const PersonImage*> chunk(images.begin() + static_cast<std::ptrdiff_t>(start),
                                          images.begin() + static_cast<std::ptrdiff_t>(end));
    auto feats = model.features(stack_pixels(chunk, 1));
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      EdgeFeature f;
      f.vector = feats[static_cast<int64_t>(i)].clone();
      f.person_id = chunk[i]->person_id;
      f.modality = chunk[i]->modality;
      f.source_path = chunk[i]->source_path;
      out.push_back(std::move(f));
    }
  }
  return out;
}

std::vector<IdentityCentroid> cluster_features(const std::vector<EdgeFeature>& features) {
  std::map<std::pair<int, Modality>, std::vector<const EdgeFeature*>> groups;
  for (const auto& f : features) {
    if (!f.person_id) throw Error("cluster_features: feature without person_id");
    groups[{*f.person_id, f.modality}].push_back(&f);
  }
  std::vector<IdentityCentroid> out;
  for (const auto& [key, members] : groups) {
    auto sum = torch::zeros_like(members.front()->vector);
    for (const auto* m : members) sum = sum + m->vector;
    auto mean = sum / static_cast<double>(members.size());
    const double norm = mean.norm().item<double>();
    if (norm < 1e-6) {
      throw Error("degenerate centroid for identity " + std::to_string(key.first) + " (" +
                  std::string(to_string(key.second)) + ")");
    }
    out.push_back({key.first, key.second, mean / norm, static_cast<int>(members.size())});
  }
  return out;
}

torch::Tensor group_centroids(const torch::Tensor& features, const std::vector<int>& group, int groups) {
  auto index = torch::tensor(std::vector<int64_t>(group.begin(), group.end()), torch::kLong);
  auto sums = torch::zeros({groups, features.size(1)}, features.options()).index_add(0, index, features);
  return F::normalize(sums, F::NormalizeFuncOptions().p(2).dim(1).eps(1e-12));
}

torch::Tensor extractor_loss(const torch::Tensor& visible, const torch::Tensor& infrared) {
  TORCH_CHECK(visible.sizes() == infrared.sizes(), "extractor_loss: centroid sets must match");
  const int64_t P = visible.size(0);
  if (P < 2) throw Error("objective undefined for one identity");
  std::vector<int64_t> ii, jj;
  for (int64_t p = 0; p < P; ++p) {
    for (int64_t q = 0; q < P; ++q) {
      if (p != q) {
        ii.push_back(p);
        jj.push_back(q);
      }
    }
  }
  auto I = torch::tensor(ii, torch::kLong);
  auto J = torch::tensor(jj, torch::kLong);
  auto cross = (visible - infrared).norm(2, 1);  // [P]
  auto vv = (visible.index_select(0, I) - visible.index_select(0, J)).norm(2, 1);
  auto rr = (infrared.index_select(0, I) - infrared.index_select(0, J)).norm(2, 1);
  return cross.index_select(0, I).sum() - (vv + rr).sum();
}

double extractor_loss(const std::vector<IdentityCentroid>& centroids, const std::vector<int>& batch) {
  if (batch.size() < 2) throw Error("objective undefined for one identity");
  std::map<std::pair<int, Modality>, torch::Tensor> lookup;
  for (const auto& c : centroids) lookup[{c.person_id, c.modality}] = c.centroid;
  std::vector<torch::Tensor> vis, ir;
  for (int pid : batch) {
    auto v = lookup.find({pid, Modality::Visible});
    auto r = lookup.find({pid, Modality::Infrared});
    if (v == lookup.end() || r == lookup.end()) {
      throw Error("identity " + std::to_string(pid) + " lacks a centroid in both modalities");
    }
    vis.push_back(v->second);
    ir.push_back(r->second);
  }
  torch::NoGradGuard guard;
  return extractor_loss(torch::stack(vis), torch::stack(ir)).item<double>();
}

ExtractorModel ablate_levels(const ExtractorModel& model, const std::set<int>& removed) {
  for (int k : removed) {
    if (k < 1 || k > kEdgeLevels) throw Error("ablated level out of range 1..5: " + std::to_string(k));
  }
  ExtractorModel out = model.clone();
  out.removed_levels = removed;
  return out;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

void to_json(nlohmann::json& j, const ExtractorTrainConfig& c) {
  j = nlohmann::json{{"train", c.train},
                     {"fuse_channels", c.options.fuse_channels},
                     {"encoder_channels", c.options.encoder_channels},
                     {"feature_dim", c.options.feature_dim},
                     {"pool_rows", c.options.pool_rows},
                     {"pool_cols", c.options.pool_cols},
                     {"backbone", c.backbone}};
}

void from_json(const nlohmann::json& j, ExtractorTrainConfig& c) {
  if (j.contains("train")) c.train = j.at("train").get<TrainConfig>();
  c.options.fuse_channels = j.value("fuse_channels", c.options.fuse_channels);
  c.options.encoder_channels = j.value("encoder_channels", c.options.encoder_channels);
  c.options.feature_dim = j.value("feature_dim", c.options.feature_dim);
  c.options.pool_rows = j.value("pool_rows", c.options.pool_rows);
  c.options.pool_cols = j.value("pool_cols", c.options.pool_cols);
  c.backbone = j.value("backbone", c.backbone);
}

namespace {

struct IdentityIndex {
  std::vector<int> ids;
  std::map<int, std::vector<int>> visible;
  std::map<int, std::vector<int>> infrared;
};

IdentityIndex index_identities(const Dataset& ds) {
  IdentityIndex idx;
  for (int i = 0; i < static_cast<int>(ds.images.size()); ++i) {
    const auto& im = ds.images[static_cast<std::size_t>(i)];
    (im.modality == Modality::Visible ? idx.visible : idx.infrared)[im.person_id].push_back(i);
  }
  for (int pid : ds.identities) {
    if (idx.visible.contains(pid) && idx.infrared.contains(pid)) idx.ids.push_back(pid);
  }
  return idx;
}

// Per-level slice of a precomputed edge stack.
EdgeMapStack select_stack(const EdgeMapStack& all, const torch::Tensor& rows) {
  EdgeMapStack s;
  s.input_height = all.input_height;
  s.input_width = all.input_width;
  for (std::size_t k = 0; k < all.levels.size(); ++k) s.levels[k] = all.levels[k].index_select(0, rows);
  return s;
}

// Mean cross-modal centroid distance between different identities minus the
// same-identity one.
double centroid_margin(const torch::Tensor& vis, const torch::Tensor& ir) {
  auto d = torch::cdist(vis, ir);  // [P,P]
  const auto P = d.size(0);
  const double same = d.diagonal().mean().item<double>();
  const double diff = (d.sum().item<double>() - d.diagonal().sum().item<double>()) / static_cast<double>(P * (P - 1));
  return diff - same;
}

}  // namespace

ExtractorTrainResult train_extractor(const Dataset& dataset, const ExtractorTrainConfig& config) {
  return train_extractor(dataset, config,
                         ExtractorModel::create(config.options, config.train.seed, make_backbone(config.backbone)));
}

ExtractorTrainResult train_extractor(const Dataset& dataset, const ExtractorTrainConfig& config,
                                     ExtractorModel model) {
  const auto index = index_identities(dataset);
  if (index.ids.size() < 2) throw Error("train_extractor: need at least two identities in both modalities");
  const TrainConfig& tc = config.train;

  std::vector<const PersonImage*> all;
  for (const auto& im : dataset.images) all.push_back(&im);
  EdgeMapStack edges;
  {
    torch::NoGradGuard guard;
    edges = detect_edges_batch(stack_pixels(all, 1), *model.backbone);
  }

  model.set_trainable(true);
  model.net->train();
  auto optimizer = make_optimizer(tc, model.net->parameters());

  std::mt19937_64 rng(tc.seed ^ 0xe1ec7a11ULL);
  const int k = std::max(1, tc.images_per_id);
  std::size_t max_group = 0;
  for (int pid : index.ids) {
    max_group = std::max({max_group, index.visible.at(pid).size(), index.infrared.at(pid).size()});
  }
  const int rounds = static_cast<int>((max_group + static_cast<std::size_t>(k) - 1) / static_cast<std::size_t>(k));

  auto evaluate_margin = [&]() {
    torch::NoGradGuard guard;
    std::vector<int64_t> rows;
    std::vector<int> groups;
    std::map<int, int> slot;
    for (int pid : index.ids) slot[pid] = static_cast<int>(slot.size());
    const int P = static_cast<int>(index.ids.size());
    for (int pid : index.ids) {
      for (int i : index.visible.at(pid)) rows.push_back(i), groups.push_back(slot[pid]);
      for (int i : index.infrared.at(pid)) rows.push_back(i), groups.push_back(P + slot[pid]);
    }
    auto r = torch::tensor(rows, torch::kLong);
    auto feats = encode_batch(fuse(select_stack(edges, r), model).u, model);
    auto cents = group_centroids(feats, groups, 2 * P);
    return centroid_margin(cents.slice(0, 0, P), cents.slice(0, P, 2 * P));
  };

  ExtractorTrainResult result{model, {}};
  result.curve.monitor_name = "train_margin";
  for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
    std::vector<int> ids = index.ids;
    std::shuffle(ids.begin(), ids.end(), rng);
    std::map<int, std::vector<int>> vis_order, ir_order;
    for (int pid : ids) {
      vis_order[pid] = index.visible.at(pid);
      ir_order[pid] = index.infrared.at(pid);
      std::shuffle(vis_order[pid].begin(), vis_order[pid].end(), rng);
      std::shuffle(ir_order[pid].begin(), ir_order[pid].end(), rng);
    }
    std::vector<std::vector<int>> batches;
    for (std::size_t s = 0; s < ids.size(); s += static_cast<std::size_t>(tc.ids_per_batch)) {
      std::vector<int> b(ids.begin() + static_cast<std::ptrdiff_t>(s),
                         ids.begin() + static_cast<std::ptrdiff_t>(std::min(ids.size(), s + tc.ids_per_batch)));
      if (b.size() < 2 && !batches.empty()) {
        batches.back().insert(batches.back().end(), b.begin(), b.end());
      } else {
        batches.push_back(std::move(b));
      }
    }

    double loss_sum = 0.0;
    int steps = 0;
    for (int round = 0; round < rounds; ++round) {
      for (const auto& batch : batches) {
        std::vector<int64_t> rows;
        std::vector<int> groups;
        const int P = static_cast<int>(batch.size());
        for (int slot = 0; slot < P; ++slot) {
          const int pid = batch[static_cast<std::size_t>(slot)];
          const auto& v = vis_order[pid];
          const auto& r = ir_order[pid];
          for (int j = 0; j < k; ++j) {
            rows.push_back(v[static_cast<std::size_t>(round * k + j) % v.size()]);
            groups.push_back(slot);
          }
          for (int j = 0; j < k; ++j) {
            rows.push_back(r[static_cast<std::size_t>(round * k + j) % r.size()]);
            groups.push_back(P + slot);
          }
        }
        auto feats = encode_batch(fuse(select_stack(edges, torch::tensor(rows, torch::kLong)), model).u, model);
        auto cents = group_centroids(feats, groups, 2 * P);
        auto loss = extractor_loss(cents.slice(0, 0, P), cents.slice(0, P, 2 * P));
        const double value = loss.item<double>();
        if (!std::isfinite(value)) {
          if (tc.divergence_checkpoint) save_extractor(model, *tc.divergence_checkpoint, {{"diverged_at_epoch", epoch}});
          throw TrainingDiverged("training diverged: non-finite extractor loss at epoch " + std::to_string(epoch));
        }
        optimizer->zero_grad();
        loss.backward();
        optimizer->step();
        loss_sum += value;
        ++steps;
      }
    }
    result.curve.epochs.push_back({epoch, loss_sum / std::max(1, steps), evaluate_margin()});
    VLOG(1) << "extractor epoch " << epoch << " loss " << result.curve.epochs.back().loss << " margin "
            << result.curve.epochs.back().monitor;
  }
  model.net->eval();
  model.set_trainable(false);
  result.model = model;
  return result;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

void save_extractor(const ExtractorModel& model, const fs::path& path, const nlohmann::json& provenance) {
  nlohmann::json meta{{"kind", "extractor"},
                      {"fuse_channels", model.net->options.fuse_channels},
                      {"encoder_channels", model.net->options.encoder_channels},
                      {"feature_dim", model.net->options.feature_dim},
                      {"pool_rows", model.net->options.pool_rows},
                      {"pool_cols", model.net->options.pool_cols},
                      {"removed_levels", model.removed_levels},
                      {"backbone", model.backbone->identifier()},
                      {"parameter_fingerprint", parameter_fingerprint(*model.net)},
                      {"provenance", provenance}};
  save_checkpoint(*model.net, meta, path);
}

std::pair<ExtractorModel, nlohmann::json> load_extractor(const fs::path& path) {
  const auto meta = read_checkpoint_meta(path);
  if (meta.value("kind", "") != "extractor") throw Error("bad checkpoint: not an extractor: " + path.string());
  ExtractorOptions opts;
  opts.fuse_channels = meta.at("fuse_channels");
  opts.encoder_channels = meta.at("encoder_channels");
  opts.feature_dim = meta.at("feature_dim");
  opts.pool_rows = meta.value("pool_rows", 1);
  opts.pool_cols = meta.value("pool_cols", 1);
  ExtractorModel model = ExtractorModel::create(opts, 0, make_backbone(meta.at("backbone")));
  load_checkpoint_parameters(*model.net, path);
  model.removed_levels = meta.at("removed_levels").get<std::set<int>>();
  model.net->eval();
  model.set_trainable(false);
  return {model, meta.value("provenance", nlohmann::json::object())};
}

void write_feature_cache(const std::vector<EdgeFeature>& features, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write feature cache " + path.string());
  for (const auto& f : features) {
    auto v = f.vector.detach().to(torch::kFloat64).contiguous();
    std::vector<double> values(v.data_ptr<double>(), v.data_ptr<double>() + v.numel());
    nlohmann::json rec{{"source_path", f.source_path},
                       {"person_id", f.person_id ? nlohmann::json(*f.person_id) : nlohmann::json(nullptr)},
                       {"modality", to_string(f.modality)},
                       {"vector", values}};
    out << rec.dump() << "\n";
  }
}

std::vector<EdgeFeature> read_feature_cache(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DependencyMissing("feature cache not found: " + path.string());
  std::vector<EdgeFeature> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto rec = nlohmann::json::parse(line);
    EdgeFeature f;
    f.source_path = rec.at("source_path");
    if (!rec.at("person_id").is_null()) f.person_id = rec.at("person_id").get<int>();
    f.modality = parse_modality(rec.at("modality").get<std::string>());
    auto values = rec.at("vector").get<std::vector<double>>();
    f.vector = torch::tensor(values, torch::kFloat64).to(torch::kFloat32);
    out.push_back(std::move(f));
  }
  return out;
}

}  // namespace edgeattack
