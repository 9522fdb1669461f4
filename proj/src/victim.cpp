#include "edgeattack/victim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include <c10/util/Logging.h>

#include "edgeattack/checkpoint.hpp"
#include "edgeattack/common.hpp"

namespace F = torch::nn::functional;
namespace fs = std::filesystem;

namespace edgeattack {

torch::Tensor embed(const PersonImage& image, const VictimModel& model) { return model.embed({&image}).squeeze(0); }

// ---------------------------------------------------------------------------
// Ranking
// ---------------------------------------------------------------------------

RankingResult rank_embeddings(const std::string& query_ref, int query_pid, const torch::Tensor& query,
                              const std::vector<std::string>& gallery_refs, const std::vector<int>& gallery_pids,
                              const torch::Tensor& gallery) {
  if (gallery_refs.empty()) throw Error("empty gallery");
  auto q = F::normalize(query.to(torch::kFloat64).unsqueeze(0), F::NormalizeFuncOptions().dim(1).eps(1e-12));
  auto g = F::normalize(gallery.to(torch::kFloat64), F::NormalizeFuncOptions().dim(1).eps(1e-12));
  auto sims = torch::matmul(g, q.squeeze(0)).contiguous();
  const double* s = sims.data_ptr<double>();
  std::vector<std::size_t> order(gallery_refs.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (s[a] != s[b]) return s[a] > s[b];
    return gallery_refs[a] < gallery_refs[b];
  });
  RankingResult r;
  r.query_ref = query_ref;
  for (std::size_t pos = 0; pos < order.size(); ++pos) {
    r.ordered_gallery.emplace_back(gallery_refs[order[pos]], s[order[pos]]);
    if (gallery_pids[order[pos]] == query_pid) r.correct_positions.push_back(static_cast<int>(pos + 1));
  }
  return r;
}

RankingResult rank(const PersonImage& query, const std::vector<PersonImage>& gallery, const VictimModel& model) {
  if (gallery.empty()) throw Error("empty gallery");
  std::vector<const PersonImage*> ptrs;
  std::vector<std::string> refs;
  std::vector<int> pids;
  for (const auto& g : gallery) {
    ptrs.push_back(&g);
    refs.push_back(g.source_path);
    pids.push_back(g.person_id);
  }
  return rank_embeddings(query.source_path, query.person_id, embed(query, model), refs, pids, model.embed(ptrs));
}

// ---------------------------------------------------------------------------
// Toy victim
// ---------------------------------------------------------------------------

ToyVictimNetImpl::ToyVictimNetImpl(const ToyVictimOptions& opts, int n_classes) : options(opts) {
  namespace nn = torch::nn;
  backbone = register_module("backbone", nn::Sequential());
  int in = 3;
  int out = opts.width;
  for (int s = 0; s < opts.stages; ++s) {
    backbone->push_back(nn::Conv2d(nn::Conv2dOptions(in, out, 3).stride(2).padding(1).bias(false)));
    backbone->push_back(nn::BatchNorm2d(out));
    backbone->push_back(nn::ReLU());
    backbone->push_back(nn::Conv2d(nn::Conv2dOptions(out, out, 3).padding(1).bias(false)));
    backbone->push_back(nn::BatchNorm2d(out));
    backbone->push_back(nn::ReLU());
    in = out;
    out *= 2;
  }
  projection = register_module("projection", nn::Linear(in * opts.stripes, opts.embedding_dim));
  neck = register_module("neck", nn::BatchNorm1d(opts.embedding_dim));
  classifier = register_module("classifier", nn::Linear(nn::LinearOptions(opts.embedding_dim, n_classes).bias(false)));
}

torch::Tensor ToyVictimNetImpl::forward(const torch::Tensor& images) {
  auto h = F::adaptive_avg_pool2d(backbone->forward(images), F::AdaptiveAvgPool2dFuncOptions({options.stripes, 1}))
               .flatten(1);
  return projection->forward(h);
}

ToyVictim::ToyVictim(ToyVictimNet net, ImageSize input_size, std::string config_hash)
    : net_(std::move(net)), input_size_(input_size), config_hash_(std::move(config_hash)) {}

torch::Tensor ToyVictim::embed(const std::vector<const PersonImage*>& images) const {
  for (const auto* im : images) {
    if (im->pixels.dim() != 3 || im->height() != input_size_.height || im->width() != input_size_.width) {
      throw Error("victim input shape mismatch: expected " + std::to_string(input_size_.height) + "x" +
                  std::to_string(input_size_.width));
    }
  }
  torch::NoGradGuard guard;
  ToyVictimNet net = net_;
  net->eval();
  std::vector<torch::Tensor> parts;
  for (std::size_t s = 0; s < images.size(); s += 64) {
    std::vector<const PersonImage*> chunk(images.begin() + static_cast<std::ptrdiff_t>(s),
                                          images.begin() + static_cast<std::ptrdiff_t>(std::min(images.size(), s + 64)));
    parts.push_back(net->forward(stack_pixels(chunk, 3)));
  }
  if (parts.empty()) return torch::zeros({0, embedding_dim()});
  return torch::cat(parts);
}

void to_json(nlohmann::json& j, const VictimTrainConfig& c) {
  j = nlohmann::json{{"train", c.train},
                     {"width", c.options.width},
                     {"stages", c.options.stages},
                     {"stripes", c.options.stripes},
                     {"embedding_dim", c.options.embedding_dim},
                     {"triplet_margin", c.triplet_margin},
                     {"triplet_weight", c.triplet_weight},
                     {"flip_probability", c.flip_probability},
                     {"erasing_probability", c.erasing_probability}};
}

void from_json(const nlohmann::json& j, VictimTrainConfig& c) {
  if (j.contains("train")) {
    nlohmann::json base = c.train;
    base.merge_patch(j.at("train"));
    c.train = base.get<TrainConfig>();
  }
  c.options.width = j.value("width", c.options.width);
  c.options.stages = j.value("stages", c.options.stages);
  c.options.stripes = j.value("stripes", c.options.stripes);
  c.options.embedding_dim = j.value("embedding_dim", c.options.embedding_dim);
  c.triplet_margin = j.value("triplet_margin", c.triplet_margin);
  c.triplet_weight = j.value("triplet_weight", c.triplet_weight);
  c.flip_probability = j.value("flip_probability", c.flip_probability);
  c.erasing_probability = j.value("erasing_probability", c.erasing_probability);
}

namespace {

// Random erasing with a constant fill (the usual re-id training mean).
void random_erase(torch::Tensor& img, std::mt19937_64& rng) {
  static const float fill[3] = {0.4914f, 0.4822f, 0.4465f};
  std::uniform_real_distribution<double> U(0.0, 1.0);
  const int H = static_cast<int>(img.size(1));
  const int W = static_cast<int>(img.size(2));
  for (int attempt = 0; attempt < 100; ++attempt) {
    const double area = (0.02 + U(rng) * (0.4 - 0.02)) * H * W;
    const double aspect = std::exp(std::log(0.3) + U(rng) * (std::log(1 / 0.3) - std::log(0.3)));
    const int h = static_cast<int>(std::round(std::sqrt(area * aspect)));
    const int w = static_cast<int>(std::round(std::sqrt(area / aspect)));
    if (h < 1 || w < 1 || h >= H || w >= W) continue;
    const int y = static_cast<int>(U(rng) * (H - h));
    const int x = static_cast<int>(U(rng) * (W - w));
    for (int c = 0; c < img.size(0); ++c) img[c].slice(0, y, y + h).slice(1, x, x + w).fill_(fill[c]);
    return;
  }
}

// Batch-hard triplet loss restricted to cross-modal pairs.
torch::Tensor cross_modal_triplet(const torch::Tensor& emb, const std::vector<int>& labels,
                                  const std::vector<int>& modality, double margin) {
  auto f = F::normalize(emb, F::NormalizeFuncOptions().dim(1).eps(1e-12));
  const auto n = static_cast<int64_t>(labels.size());
  auto lab = torch::tensor(std::vector<int64_t>(labels.begin(), labels.end()));
  auto mod = torch::tensor(std::vector<int64_t>(modality.begin(), modality.end()));
  auto same_id = lab.unsqueeze(0) == lab.unsqueeze(1);
  auto cross = mod.unsqueeze(0) != mod.unsqueeze(1);
  auto d = (2.0 - 2.0 * torch::matmul(f, f.t())).clamp_min(1e-12).sqrt();
  auto pos_mask = (same_id & cross).to(d.dtype());
  auto neg_mask = ((~same_id) & cross).to(d.dtype());
  auto hardest_pos = (d * pos_mask - 1e4 * (1 - pos_mask)).amax(1);
  auto hardest_neg = (d + 1e4 * (1 - neg_mask)).amin(1);
  auto valid = (pos_mask.sum(1) > 0) & (neg_mask.sum(1) > 0);
  auto per = F::relu(hardest_pos - hardest_neg + margin);
  (void)n;
  return (per * valid.to(per.dtype())).sum() / valid.sum().clamp_min(1).to(per.dtype());
}

double train_rank1(ToyVictimNet& net, const torch::Tensor& vis, const std::vector<int>& vis_lab,
                   const torch::Tensor& ir, const std::vector<int>& ir_lab) {
  torch::NoGradGuard guard;
  net->eval();
  auto a = F::normalize(net->forward(vis), F::NormalizeFuncOptions().dim(1));
  auto b = F::normalize(net->forward(ir), F::NormalizeFuncOptions().dim(1));
  auto best = torch::matmul(a, b.t()).argmax(1);
  int hit = 0;
  for (int64_t i = 0; i < best.size(0); ++i) {
    hit += ir_lab[static_cast<std::size_t>(best[i].item<int64_t>())] == vis_lab[static_cast<std::size_t>(i)];
  }
  net->train();
  return 100.0 * hit / std::max<int64_t>(1, best.size(0));
}

}  // namespace

VictimTrainResult train_toy_victim(const Dataset& dataset, const VictimTrainConfig& config) {
  const TrainConfig& tc = config.train;
  std::map<int, std::vector<int>> vis_rows, ir_rows;
  std::vector<const PersonImage*> all;
  for (const auto& im : dataset.images) {
    (im.modality == Modality::Visible ? vis_rows : ir_rows)[im.person_id].push_back(static_cast<int>(all.size()));
    all.push_back(&im);
  }
  std::vector<int> ids;
  for (int pid : dataset.identities) {
    if (vis_rows.contains(pid) && ir_rows.contains(pid)) ids.push_back(pid);
  }
  if (ids.size() < 2) throw Error("train_toy_victim: need at least two paired identities");
  std::map<int, int> label;
  for (int pid : ids) label[pid] = static_cast<int>(label.size());

  const auto pixels = stack_pixels(all, 3);
  std::vector<int> vis_lab, ir_lab;
  std::vector<int64_t> vis_all, ir_all;
  for (int pid : ids) {
    for (int r : vis_rows.at(pid)) vis_all.push_back(r), vis_lab.push_back(pid);
    for (int r : ir_rows.at(pid)) ir_all.push_back(r), ir_lab.push_back(pid);
  }
  const auto vis_t = pixels.index_select(0, torch::tensor(vis_all));
  const auto ir_t = pixels.index_select(0, torch::tensor(ir_all));

  torch::manual_seed(tc.seed);
  ToyVictimNet net(config.options, static_cast<int>(ids.size()));
  net->train();
  auto optimizer = make_optimizer(tc, net->parameters());
  std::mt19937_64 rng(tc.seed ^ 0x51c71a5ULL);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  const int k = std::max(1, tc.images_per_id);
  std::size_t max_group = 0;
  for (int pid : ids) max_group = std::max({max_group, vis_rows.at(pid).size(), ir_rows.at(pid).size()});
  const int rounds = static_cast<int>((max_group + static_cast<std::size_t>(k) - 1) / static_cast<std::size_t>(k));
  const std::string hash = sha256_hex(nlohmann::json(config).dump()).substr(0, 16);

  VictimTrainResult result;
  result.curve.monitor_name = "train_rank1";
  for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
    std::vector<int> order = ids;
    std::shuffle(order.begin(), order.end(), rng);
    std::map<int, std::vector<int>> vo, io;
    for (int pid : order) {
      vo[pid] = vis_rows.at(pid);
      io[pid] = ir_rows.at(pid);
      std::shuffle(vo[pid].begin(), vo[pid].end(), rng);
      std::shuffle(io[pid].begin(), io[pid].end(), rng);
    }
    double loss_sum = 0.0;
    int steps = 0;
    const auto per_batch = static_cast<std::size_t>(std::max(2, tc.ids_per_batch));
    for (int round = 0; round < rounds; ++round) {
      for (std::size_t s = 0; s < order.size(); s += per_batch) {
        std::vector<int64_t> rows;
        std::vector<int> labels, modality;
        for (std::size_t b = s; b < std::min(order.size(), s + per_batch); ++b) {
          const int pid = order[b];
          for (int j = 0; j < k; ++j) {
            rows.push_back(vo[pid][static_cast<std::size_t>(round * k + j) % vo[pid].size()]);
            labels.push_back(label[pid]), modality.push_back(0);
            rows.push_back(io[pid][static_cast<std::size_t>(round * k + j) % io[pid].size()]);
            labels.push_back(label[pid]), modality.push_back(1);
          }
        }
        auto batch = pixels.index_select(0, torch::tensor(rows)).clone();
        for (int64_t i = 0; i < batch.size(0); ++i) {
          auto img = batch[i];
          if (U(rng) < config.flip_probability) img.copy_(img.flip({2}));
          if (U(rng) < config.erasing_probability) random_erase(img, rng);
        }
        auto emb = net->forward(batch);
        auto logits = net->classifier->forward(net->neck->forward(emb));
        auto target = torch::tensor(std::vector<int64_t>(labels.begin(), labels.end()));
        auto loss = F::cross_entropy(logits, target) +
                    config.triplet_weight * cross_modal_triplet(emb, labels, modality, config.triplet_margin);
        const double value = loss.item<double>();
        if (!std::isfinite(value)) {
          if (tc.divergence_checkpoint) {
            save_toy_victim(ToyVictim(net, dataset.image_size, hash), *tc.divergence_checkpoint,
                            {{"diverged_at_epoch", epoch}});
          }
          throw TrainingDiverged("training diverged: non-finite victim loss at epoch " + std::to_string(epoch));
        }
        optimizer->zero_grad();
        loss.backward();
        optimizer->step();
        loss_sum += value;
        ++steps;
      }
    }
    result.curve.epochs.push_back({epoch, loss_sum / std::max(1, steps), train_rank1(net, vis_t, vis_lab, ir_t, ir_lab)});
    VLOG(1) << "victim epoch " << epoch << " loss " << result.curve.epochs.back().loss << " rank1 "
            << result.curve.epochs.back().monitor;
  }
  net->eval();
  for (auto& p : net->parameters()) p.set_requires_grad(false);
  const ImageSize size{static_cast<int>(pixels.size(2)), static_cast<int>(pixels.size(3))};
  result.model = std::make_shared<ToyVictim>(net, size, hash);
  return result;
}

void save_toy_victim(const ToyVictim& model, const fs::path& path, const nlohmann::json& provenance) {
  const auto& o = model.net()->options;
  nlohmann::json meta{{"kind", "toy-victim"},
                      {"width", o.width},
                      {"stages", o.stages},
                      {"stripes", o.stripes},
                      {"embedding_dim", o.embedding_dim},
                      {"classes", model.net()->classifier->options.out_features()},
                      {"input_height", model.input_size().height},
                      {"input_width", model.input_size().width},
                      {"config_hash", model.config_hash()},
                      {"parameter_fingerprint", parameter_fingerprint(*model.net())},
                      {"provenance", provenance}};
  save_checkpoint(*model.net(), meta, path);
}

std::shared_ptr<ToyVictim> load_toy_victim(const fs::path& path) {
  const auto meta = read_checkpoint_meta(path);
  if (meta.value("kind", "") != "toy-victim") throw Error("bad checkpoint: not a toy victim: " + path.string());
  ToyVictimOptions o;
  o.width = meta.at("width");
  o.stages = meta.at("stages");
  o.stripes = meta.value("stripes", 1);
  o.embedding_dim = meta.at("embedding_dim");
  ToyVictimNet net(o, meta.at("classes").get<int>());
  load_checkpoint_parameters(*net, path);
  net->eval();
  for (auto& p : net->parameters()) p.set_requires_grad(false);
  return std::make_shared<ToyVictim>(net, ImageSize{meta.at("input_height"), meta.at("input_width")},
                                     meta.at("config_hash").get<std::string>());
}

// ---------------------------------------------------------------------------
// Embedding exchange
// ---------------------------------------------------------------------------

ExchangeVictim::ExchangeVictim(const fs::path& dir) : dir_(dir) {
  if (!fs::is_directory(dir)) throw DependencyMissing("embedding exchange directory not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() == ".jsonl") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw Error("bad embedding exchange: no .jsonl files in " + dir.string());
  std::string digest_input;
  for (const auto& file : files) {
    std::ifstream in(file);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      const std::string where = file.filename().string() + ":" + std::to_string(line_no);
      nlohmann::json rec;
      try {
        rec = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception&) {
        throw Error("bad embedding exchange: unparsable record at " + where);
      }
      if (!rec.is_object() || !rec.contains("image_id") || !rec["image_id"].is_string() || !rec.contains("embedding") ||
          !rec["embedding"].is_array() || rec["embedding"].empty()) {
        throw Error("bad embedding exchange: record lacks image_id/embedding at " + where);
      }
      std::vector<float> v;
      for (const auto& x : rec["embedding"]) {
        if (!x.is_number()) throw Error("bad embedding exchange: non-numeric embedding at " + where);
        v.push_back(x.get<float>());
      }
      if (dim_ == 0) dim_ = static_cast<int>(v.size());
      if (static_cast<int>(v.size()) != dim_) throw Error("bad embedding exchange: inconsistent dimension at " + where);
      const auto key = rec["image_id"].get<std::string>();
      if (!table_.emplace(key, std::move(v)).second) {
        throw Error("bad embedding exchange: duplicate image_id '" + key + "' at " + where);
      }
    }
    digest_input += file.filename().string() + ";";
  }
  for (const auto& [k, v] : table_) {
    digest_input += k;
    digest_input.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(float));
  }
  hash_ = sha256_hex(digest_input).substr(0, 16);
}

torch::Tensor ExchangeVictim::embed(const std::vector<const PersonImage*>& images) const {
  auto out = torch::empty({static_cast<int64_t>(images.size()), dim_});
  for (std::size_t i = 0; i < images.size(); ++i) {
    auto it = table_.find(images[i]->source_path);
    if (it == table_.end()) throw Error("embedding not found: " + images[i]->source_path);
    out[static_cast<int64_t>(i)].copy_(torch::from_blob(const_cast<float*>(it->second.data()), {dim_}));
  }
  return out;
}

std::shared_ptr<VictimModel> external_victim(const fs::path& dir) { return std::make_shared<ExchangeVictim>(dir); }

void write_embedding_exchange(const std::vector<const PersonImage*>& images, const VictimModel& model,
                              const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write embedding exchange " + path.string());
  auto emb = model.embed(images).to(torch::kFloat32).contiguous();
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto* im = images[i];
    auto row = emb[static_cast<int64_t>(i)];
    std::vector<float> v(row.data_ptr<float>(), row.data_ptr<float>() + row.numel());
    nlohmann::json rec{{"image_id", im->source_path},
                       {"person_id", im->person_id},
                       {"modality", std::string(to_string(im->modality))},
                       {"camera_id", im->camera_id},
                       {"embedding", v}};
    out << rec.dump() << "\n";
  }
}

}  // namespace edgeattack
