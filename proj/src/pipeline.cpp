#include "edgeattack/pipeline.hpp"

#include <fstream>
#include <sstream>

#include <c10/util/Logging.h>

#include "edgeattack/checkpoint.hpp"
#include "edgeattack/common.hpp"
#include "edgeattack/edge_extractor.hpp"
#include "edgeattack/patch_generator.hpp"
#include "edgeattack/victim.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace edgeattack {

namespace {

// Per-stage seeds come from the experiment seed, so the sections carry none.
json without_seed(json train) {
  train.erase("seed");
  return train;
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("malformed config " + path.string() + ": " + e.what());
  }
}

void write_json_file(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

// Every key present in `given` must exist in `schema`. Arrays are leaves.
void check_known_keys(const json& given, const json& schema, const std::string& prefix) {
  if (!given.is_object()) return;
  for (const auto& [key, value] : given.items()) {
    const std::string name = prefix.empty() ? key : prefix + "." + key;
    if (!schema.contains(key)) throw ConfigError("unknown config key '" + name + "'");
    if (schema.at(key).is_object()) {
      if (!value.is_object()) throw ConfigError("config key '" + name + "' must be an object");
      check_known_keys(value, schema.at(key), name);
    }
  }
}

std::vector<Direction> directions_of(const json& config) {
  const std::string d = config.at("evaluation").at("direction").get<std::string>();
  if (d == "both") return {Direction::VisToIr, Direction::IrToVis};
  return {parse_direction(d)};
}

std::set<int> level_set(const json& j) {
  std::set<int> out;
  for (const auto& v : j) {
    const int k = v.get<int>();
    if (k < 1 || k > kEdgeLevels) throw ConfigError("edge level out of range 1..5: " + std::to_string(k));
    out.insert(k);
  }
  return out;
}

Layout layout_of(const Experiment& e) { return parse_layout(e.config.at("dataset").at("layout").get<std::string>()); }

ImageSize image_size_of(const Experiment& e) {
  const auto& d = e.config.at("dataset");
  return {d.at("height").get<int>(), d.at("width").get<int>()};
}

ToyParams toy_params(const Experiment& e) {
  const auto& d = e.config.at("dataset");
  ToyParams p;
  p.n_ids = d.at("n_ids");
  p.per_id_per_modality = d.at("per_id_per_modality");
  p.image_size = image_size_of(e);
  p.seed = e.seed;
  return p;
}

ExtractorTrainConfig extractor_config(const Experiment& e) {
  auto c = e.config.at("extractor").get<ExtractorTrainConfig>();
  c.train.seed = e.seed;
  c.train.divergence_checkpoint = e.checkpoints() / "extractor.diverged.pt";
  return c;
}

GeneratorTrainConfig generator_config(const Experiment& e, int feature_dim) {
  auto c = e.config.at("generator").get<GeneratorTrainConfig>();
  c.options.feature_dim = feature_dim;
  c.train.seed = e.seed;
  c.train.divergence_checkpoint = e.checkpoints() / "generator.diverged.pt";
  return c;
}

VictimTrainConfig victim_config(const Experiment& e) {
  auto c = e.config.at("victim").get<VictimTrainConfig>();
  c.train.seed = e.seed;
  c.train.divergence_checkpoint = e.checkpoints() / "victim.diverged.pt";
  return c;
}

EvalOptions eval_options(const Experiment& e, Direction direction) {
  const auto& ev = e.config.at("evaluation");
  EvalOptions o;
  o.direction = direction;
  o.protocol = parse_protocol(ev.at("protocol").get<std::string>());
  o.n_runs = ev.at("n_runs");
  o.seed = e.seed;
  o.r_values = ev.at("r_values").get<std::vector<int>>();
  o.config_hash = e.config_hash;
  return o;
}

void validate(const json& config) {
  try {
    if (config.at("name").get<std::string>().empty()) throw ConfigError("name must not be empty");
    config.at("seed").get<std::uint64_t>();
    const auto& d = config.at("dataset");
    const Layout layout = parse_layout(d.at("layout").get<std::string>());
    if (d.at("height").get<int>() < 16 || d.at("width").get<int>() < 16) throw ConfigError("image size below 16x16");
    if (layout == Layout::Toy) {
      const int per = d.at("per_id_per_modality");
      const int train = d.at("train_per_group");
      if (d.at("n_ids").get<int>() < 2) throw ConfigError("dataset.n_ids must be at least 2");
      if (train < 1 || train >= per) throw ConfigError("dataset.train_per_group must lie in [1, per_id_per_modality)");
    } else if (d.at("root").get<std::string>().empty()) {
      throw ConfigError("dataset.root is required for layout " + d.at("layout").get<std::string>());
    }
    d.at("cameras").get<std::set<int>>();
    const auto ext = config.at("extractor").get<ExtractorTrainConfig>();
    if (ext.options.feature_dim < 1) throw ConfigError("extractor.feature_dim must be positive");
    level_set(config.at("extractor").at("removed_levels"));
    const auto gen = config.at("generator").get<GeneratorTrainConfig>();
    gen.placement.validate();
    if (gen.options.embed_dim % gen.options.heads != 0) throw ConfigError("generator.embed_dim must divide by heads");
    const auto& v = config.at("victim");
    const std::string kind = v.at("kind");
    if (kind != "toy" && kind != "exchange") throw ConfigError("victim.kind must be 'toy' or 'exchange'");
    if (kind == "exchange" && v.at("exchange_dir").get<std::string>().empty()) {
      throw ConfigError("victim.exchange_dir is required for kind 'exchange'");
    }
    v.get<VictimTrainConfig>();
    for (const auto* t : {&config.at("extractor").at("train"), &config.at("generator").at("train"), &v.at("train")}) {
      const std::string opt = t->at("optimizer");
      if (opt != "sgd" && opt != "adam") throw ConfigError("unknown optimizer '" + opt + "'");
      if (t->at("epochs").get<int>() < 1) throw ConfigError("epochs must be positive");
    }
    const auto& ev = config.at("evaluation");
    directions_of(config);
    parse_protocol(ev.at("protocol").get<std::string>());
    if (ev.at("n_runs").get<int>() < 1) throw ConfigError("evaluation.n_runs must be positive");
    if (ev.at("r_values").get<std::vector<int>>().empty()) throw ConfigError("evaluation.r_values must not be empty");
    for (const auto& s : config.at("ablation").at("schedule")) level_set(s);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
}

void ensure_fresh(const Experiment& e, const fs::path& path) {
  if (!fs::exists(path)) return;
  if (!e.force) throw ConfigError("output exists: " + path.string() + " (use --force to overwrite)");
  fs::remove_all(path);
}

void require(const fs::path& path) {
  if (!fs::exists(path)) throw DependencyMissing("dependency checkpoint not found: " + path.string());
}

// The resolved config sits next to the artifacts; a differing one is reported
// but artifacts always carry their own hash.
void record_config(const Experiment& e) {
  const fs::path path = e.dir / "config.json";
  if (fs::exists(path)) {
    const json stored = read_json_file(path);
    if (experiment_config_hash(stored) != e.config_hash) {
      LOG(WARNING) << "config differs from the one stored in " << path.string() << "; artifacts record their own hash";
    }
    return;
  }
  write_json_file(path, e.config);
}

json stage_provenance(const Experiment& e, const std::string& stage, const TrainingCurve& curve) {
  json p = e.provenance();
  p["stage"] = stage;
  json epochs = json::array();
  for (const auto& r : curve.epochs) epochs.push_back({{"epoch", r.epoch}, {"loss", r.loss}, {"monitor", r.monitor}});
  p["curve"] = {{"monitor", curve.monitor_name}, {"epochs", epochs}};
  return p;
}

ExtractorModel load_attack_extractor(const Experiment& e) {
  require(e.extractor_checkpoint());
  auto model = load_extractor(e.extractor_checkpoint()).first;
  const auto removed = level_set(e.config.at("extractor").at("removed_levels"));
  return removed.empty() ? model : ablate_levels(model, removed);
}

std::shared_ptr<VictimModel> load_victim(const Experiment& e) {
  const auto& v = e.config.at("victim");
  if (v.at("kind").get<std::string>() == "exchange") return external_victim(v.at("exchange_dir").get<std::string>());
  require(e.victim_checkpoint());
  return load_toy_victim(e.victim_checkpoint());
}

std::vector<const PersonImage*> pointers(const Dataset& ds) {
  std::vector<const PersonImage*> out;
  for (const auto& im : ds.images) out.push_back(&im);
  return out;
}

fs::path direction_dir(const Experiment& e, Direction d) { return e.reports() / std::string(to_string(d)); }

}  // namespace

json default_experiment_config() {
  json extractor = ExtractorTrainConfig{};
  extractor["train"] = without_seed(extractor["train"]);
  extractor["removed_levels"] = json::array();

  json generator = GeneratorTrainConfig{};
  generator["train"] = without_seed(generator["train"]);
  generator["z_seed"] = 0;

  json victim = VictimTrainConfig{};
  victim["train"] = without_seed(victim["train"]);
  victim["kind"] = "toy";
  victim["exchange_dir"] = "";

  return json{{"name", "toy"},
              {"seed", 0},
              {"dataset",
               {{"layout", "toy"},
                {"root", ""},
                {"train_root", ""},
                {"height", 128},
                {"width", 64},
                {"n_ids", 8},
                {"per_id_per_modality", 4},
                {"train_per_group", 2},
                {"regdb_trial", 1},
                {"cameras", json::array()}}},
              {"extractor", extractor},
              {"generator", generator},
              {"victim", victim},
              {"evaluation",
               {{"direction", "vis_to_ir"}, {"protocol", "all"}, {"n_runs", 1}, {"r_values", kDefaultRanks}}},
              {"ablation", {{"schedule", {json::array(), {5}, {4, 5}, {3, 4, 5}, {2, 3, 4, 5}, {1, 2, 3, 4, 5}}}}}};
}

void apply_override(json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like section.key=value: " + assignment);
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;
  }
  const json schema = default_experiment_config();
  const json* s = &schema;
  json* target = &config;
  std::stringstream parts(key);
  std::string part;
  std::vector<std::string> path;
  while (std::getline(parts, part, '.')) path.push_back(part);
  for (std::size_t i = 0; i < path.size(); ++i) {
    if (!s->is_object() || !s->contains(path[i])) throw ConfigError("unknown config key '" + key + "'");
    s = &s->at(path[i]);
    if (i + 1 < path.size()) {
      if (!target->contains(path[i]) || !(*target)[path[i]].is_object()) (*target)[path[i]] = json::object();
      target = &(*target)[path[i]];
    }
  }
  if (s->is_object() && !value.is_object()) throw ConfigError("config key '" + key + "' needs an object value");
  (*target)[path.back()] = value;
}

json resolve_experiment_config(const std::optional<fs::path>& config_file, const std::vector<std::string>& overrides,
                               const std::optional<std::uint64_t>& seed) {
  json config = default_experiment_config();
  const json schema = config;
  if (config_file) {
    const json given = read_json_file(*config_file);
    if (!given.is_object()) throw ConfigError("config must be a JSON object: " + config_file->string());
    check_known_keys(given, schema, "");
    config.merge_patch(given);
  }
  for (const auto& o : overrides) apply_override(config, o);
  if (seed) config["seed"] = *seed;
  validate(config);
  return config;
}

std::string experiment_config_hash(const json& config) { return sha256_hex(config.dump()); }

fs::path Experiment::data_dir() const {
  const auto& d = config.at("dataset");
  if (d.at("layout").get<std::string>() == "toy" && d.at("root").get<std::string>().empty()) return dir / "data";
  return d.at("root").get<std::string>();
}

json Experiment::provenance() const { return {{"config_hash", config_hash}, {"seed", seed}}; }

Experiment open_experiment(const json& config, const std::optional<fs::path>& out, bool force) {
  Experiment e;
  e.config = config;
  e.config_hash = experiment_config_hash(config);
  e.seed = config.at("seed").get<std::uint64_t>();
  e.dir = out ? *out : fs::path("runs") / config.at("name").get<std::string>();
  e.force = force;
  return e;
}

DatasetSplits load_splits(const Experiment& e) {
  const auto& d = e.config.at("dataset");
  const Layout layout = layout_of(e);
  const fs::path root = e.data_dir();
  if (!fs::is_directory(root)) {
    throw DependencyMissing("dataset not found: " + root.string() + (layout == Layout::Toy ? " (run gen-data)" : ""));
  }
  LoadOptions options;
  options.image_size = image_size_of(e);
  options.regdb_trial = d.at("regdb_trial");
  options.cameras = d.at("cameras").get<std::set<int>>();
  DatasetSplits s;
  if (layout == Layout::Toy) {
    auto [train, test] = partition_by_index(load_dataset(root, Layout::Toy, options), d.at("train_per_group"));
    s.train = std::move(train);
    s.test = std::move(test);
  } else if (layout == Layout::RegDB) {
    if (!fs::is_directory(root / "idx")) LOG(WARNING) << "no idx/ lists under " << root.string() << "; train and test use every image";
    options.regdb_split = "train";
    s.train = load_dataset(root, layout, options);
    options.regdb_split = "test";
    s.test = load_dataset(root, layout, options);
  } else {
    const std::string train_root = d.at("train_root");
    const fs::path tr = train_root.empty() ? root : fs::path(train_root);
    if (!fs::is_directory(tr)) throw DependencyMissing("dataset not found: " + tr.string());
    s.train = load_dataset(tr, layout, options);
    s.test = load_dataset(root, layout, options);
  }
  return s;
}

fs::path cmd_gen_data(const Experiment& e) {
  if (layout_of(e) != Layout::Toy) throw ConfigError("gen-data needs dataset.layout = toy");
  const fs::path root = e.data_dir();
  ensure_fresh(e, root);
  record_config(e);
  const ToyParams params = toy_params(e);
  const Dataset ds = generate_toy_dataset(params);
  const fs::path manifest = export_toy_dataset(ds, params, root);
  json m = read_json_file(manifest);
  m["provenance"] = e.provenance();
  write_json_file(manifest, m);
  LOG(INFO) << "wrote " << ds.images.size() << " images under " << root.string();
  return manifest;
}

fs::path cmd_train_extractor(const Experiment& e) {
  const fs::path ckpt = e.extractor_checkpoint();
  const DatasetSplits splits = load_splits(e);
  ensure_fresh(e, ckpt);
  record_config(e);
  const auto result = train_extractor(splits.train, extractor_config(e));
  save_extractor(result.model, ckpt, stage_provenance(e, "extractor", result.curve));
  fs::create_directories(e.reports());
  result.curve.write_csv(e.reports() / "extractor_curve.csv");

  fs::create_directories(e.features());
  write_feature_cache(extract_all(pointers(splits.train), result.model), e.features() / "train.jsonl");
  write_feature_cache(extract_all(pointers(splits.test), result.model), e.features() / "test.jsonl");
  json fp = e.provenance();
  fp["extractor"] = ckpt.filename().string();
  write_json_file(e.features() / "provenance.json", fp);
  return ckpt;
}

fs::path cmd_train_generator(const Experiment& e) {
  const fs::path ckpt = e.generator_checkpoint();
  const ExtractorModel extractor = load_attack_extractor(e);
  const DatasetSplits splits = load_splits(e);
  ensure_fresh(e, ckpt);
  record_config(e);
  const auto result = train_generator(splits.train, extractor, generator_config(e, extractor.feature_dim()));
  save_generator(result.model, ckpt, stage_provenance(e, "generator", result.curve));
  fs::create_directories(e.reports());
  result.curve.write_csv(e.reports() / "generator_curve.csv");
  return ckpt;
}

fs::path cmd_train_victim(const Experiment& e) {
  if (e.config.at("victim").at("kind").get<std::string>() != "toy") {
    throw ConfigError("train-victim needs victim.kind = toy; exchange victims are trained elsewhere");
  }
  const fs::path ckpt = e.victim_checkpoint();
  const DatasetSplits splits = load_splits(e);
  ensure_fresh(e, ckpt);
  record_config(e);
  const auto result = train_toy_victim(splits.train, victim_config(e));
  save_toy_victim(*result.model, ckpt, stage_provenance(e, "victim", result.curve));
  fs::create_directories(e.reports());
  result.curve.write_csv(e.reports() / "victim_curve.csv");
  return ckpt;
}

std::vector<AttackReports> cmd_attack(const Experiment& e) {
  const ExtractorModel extractor = load_attack_extractor(e);
  require(e.generator_checkpoint());
  const GeneratorModel generator = load_generator(e.generator_checkpoint()).first;
  const auto victim = load_victim(e);
  const Dataset test = load_splits(e).test;
  record_config(e);

  const PatchSource source{&generator, &extractor, e.config.at("generator").at("z_seed").get<std::uint64_t>()};
  const auto conditions = identity_conditions(pointers(test), extractor);
  for (const auto& [pid, vec] : conditions) {
    EdgeFeature f;
    f.vector = vec;
    f.person_id = pid;
    char stem[32];
    std::snprintf(stem, sizeof(stem), "patch_%04d", pid);
    export_patch(generate_patch(f, generator, source.z_seed), e.patches(), stem);
  }
  write_json_file(e.patches() / "provenance.json", e.provenance());
  if (e.config.at("victim").at("kind").get<std::string>() == "exchange") {
    // External victims need the composited images to compute their embeddings.
    for (const auto& im : patch_visible_images(test.images, source)) {
      if (im.modality == Modality::Visible) write_png(im.pixels, e.patches() / "applied" / im.source_path);
    }
  }

  std::vector<AttackReports> out;
  for (Direction d : directions_of(e.config)) {
    const EvalOptions options = eval_options(e, d);
    AttackReports r;
    r.pre = evaluate(*victim, test, options);
    r.post = evaluate(*victim, test, options, source);
    r.degradation = degradation_report(r.pre, r.post);
    const fs::path dir = direction_dir(e, d);
    r.pre.write_json(dir / "pre.json");
    r.pre.write_csv(dir / "pre.csv");
    r.post.write_json(dir / "post.json");
    r.post.write_csv(dir / "post.csv");
    r.degradation.write_json(dir / "degradation.json");
    r.degradation.write_csv(dir / "degradation.csv");
    out.push_back(std::move(r));
  }
  return out;
}

std::string removal_label(const std::set<int>& removed) {
  if (removed.empty()) return "none";
  if (static_cast<int>(removed.size()) == kEdgeLevels) return "all";
  std::string s;
  for (int k : removed) s += (s.empty() ? "L" : ",L") + std::to_string(k);
  return s;
}

json AblationTable::to_json() const {
  json rows_j = json::array();
  for (const auto& r : rows) {
    rows_j.push_back({{"removed", r.removed},
                      {"label", removal_label(r.removed)},
                      {"direction", to_string(r.direction)},
                      {"report", r.report.to_json()}});
  }
  json base = json::array();
  for (const auto& u : unattacked) base.push_back(u.to_json());
  return {{"rows", rows_j}, {"unattacked", base}};
}

void AblationTable::write_csv(const fs::path& path) const {
  // One line per removal set; columns grouped by direction.
  std::vector<Direction> dirs;
  for (const auto& u : unattacked) dirs.push_back(u.direction);
  const std::vector<int> ranks = unattacked.empty() ? kDefaultRanks : unattacked.front().r_values;
  std::string s = "removed_levels";
  for (Direction d : dirs) {
    for (int r : ranks) s += "," + std::string(to_string(d)) + "_rank" + std::to_string(r);
    s += "," + std::string(to_string(d)) + "_map";
  }
  s += "\n";
  auto cells = [&](const EvalReport& rep) {
    std::string c;
    for (int r : ranks) c += "," + format_metric(rep.rank_r.at(r));
    return c + "," + format_metric(rep.map_score);
  };
  std::vector<std::set<int>> order;
  for (const auto& r : rows) {
    if (std::find(order.begin(), order.end(), r.removed) == order.end()) order.push_back(r.removed);
  }
  for (const auto& removed : order) {
    s += "\"" + removal_label(removed) + "\"";
    for (Direction d : dirs) {
      for (const auto& r : rows) {
        if (r.removed == removed && r.direction == d) s += cells(r.report);
      }
    }
    s += "\n";
  }
  s += "\"no attack\"";
  for (const auto& u : unattacked) s += cells(u);
  s += "\n";
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream(path, std::ios::binary) << s;
}

AblationTable cmd_ablate(const Experiment& e) {
  require(e.extractor_checkpoint());
  const ExtractorModel base = load_extractor(e.extractor_checkpoint()).first;
  const ExtractorModel attack_extractor = load_attack_extractor(e);
  require(e.generator_checkpoint());
  const GeneratorModel trained = load_generator(e.generator_checkpoint()).first;
  const auto victim = load_victim(e);
  const DatasetSplits splits = load_splits(e);
  record_config(e);
  const auto z_seed = e.config.at("generator").at("z_seed").get<std::uint64_t>();
  const auto directions = directions_of(e.config);

  AblationTable table;
  for (Direction d : directions) table.unattacked.push_back(evaluate(*victim, splits.test, eval_options(e, d)));

  for (const auto& entry : e.config.at("ablation").at("schedule")) {
    const std::set<int> removed = level_set(entry);
    ExtractorModel extractor = attack_extractor;
    GeneratorModel generator = trained;
    if (!removed.empty()) {
      extractor = ablate_levels(base, removed);
      const fs::path ckpt = e.checkpoints() / "ablation" / ("generator_" + removal_label(removed) + ".pt");
      bool cached = false;
      if (fs::exists(ckpt) && !e.force) {
        cached = read_checkpoint_meta(ckpt).at("provenance").value("config_hash", "") == e.config_hash;
      }
      if (cached) {
        generator = load_generator(ckpt).first;
      } else {
        LOG(INFO) << "training generator against extractor without " << removal_label(removed);
        const auto result = train_generator(splits.train, extractor, generator_config(e, extractor.feature_dim()));
        generator = result.model;
        save_generator(generator, ckpt, stage_provenance(e, "generator-ablation", result.curve));
      }
    }
    const PatchSource source{&generator, &extractor, z_seed};
    for (Direction d : directions) {
      table.rows.push_back({removed, d, evaluate(*victim, splits.test, eval_options(e, d), source)});
    }
  }
  json j = table.to_json();
  j["provenance"] = e.provenance();
  write_json_file(e.reports() / "ablation.json", j);
  table.write_csv(e.reports() / "ablation.csv");
  return table;
}

std::string cmd_report(const Experiment& e) {
  std::ostringstream out;
  bool any = false;
  for (Direction d : {Direction::VisToIr, Direction::IrToVis}) {
    const fs::path dir = direction_dir(e, d);
    if (!fs::exists(dir / "pre.json") || !fs::exists(dir / "post.json")) continue;
    any = true;
    const auto pre = EvalReport::from_json(read_json_file(dir / "pre.json"));
    const auto post = EvalReport::from_json(read_json_file(dir / "post.json"));
    const auto deg = degradation_report(pre, post);
    deg.write_json(dir / "degradation.json");
    deg.write_csv(dir / "degradation.csv");
    write_cmc_plot({{"clean", pre}, {"patched", post}}, dir / "cmc.png");
    out << to_string(d) << " (" << to_string(pre.protocol) << ", " << pre.n_runs << " run(s))\n";
    for (const auto& row : deg.rows) {
      out << "  " << row.metric << ": " << format_metric(row.pre) << " -> " << format_metric(row.post) << " (drop "
          << format_metric(row.drop) << ")\n";
    }
  }
  const fs::path ablation = e.reports() / "ablation.json";
  if (fs::exists(ablation)) {
    any = true;
    const json j = read_json_file(ablation);
    out << "ablation (mAP)\n";
    for (const auto& row : j.at("rows")) {
      out << "  " << row.at("direction").get<std::string>() << " " << row.at("label").get<std::string>() << ": "
          << format_metric(row.at("report").at("map").get<double>()) << "\n";
    }
  }
  if (!any) throw DependencyMissing("no reports found under " + e.reports().string() + " (run attack first)");
  return out.str();
}

}  // namespace edgeattack
