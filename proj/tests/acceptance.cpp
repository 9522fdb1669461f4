// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.
// Trains the toy benchmark pipeline for seeds 0, 1 and 2 under the build tree.

#include <array>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <regex>
#include <set>
#include <sstream>

#include <sys/wait.h>

#include "edgeattack/patch_generator.hpp"
#include "edgeattack/pipeline.hpp"
#include "oracles.hpp"

using namespace edgeattack;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string dir_name(Direction d) { return std::string(to_string(d)); }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome metric_oracles() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const int G = std::uniform_int_distribution<int>(1, 30)(rng);
    const int n_rel = std::uniform_int_distribution<int>(1, std::min(5, G))(rng);
    std::vector<int> pids(static_cast<std::size_t>(G));
    for (int i = 0; i < G; ++i) pids[static_cast<std::size_t>(i)] = i < n_rel ? 0 : 1 + i % 7;
    std::shuffle(pids.begin(), pids.end(), rng);
    std::vector<std::string> refs;
    for (int i = 0; i < G; ++i) refs.push_back("g" + std::to_string(i));
    // Exact duplicate rows give bit-identical similarities, so ties exercise
    // the identifier tie-break in both implementations.
    auto gal = torch::randn({G, 3}, torch::kFloat64);
    for (int i = 1; i < G; ++i) {
      if (std::bernoulli_distribution(0.25)(rng)) gal[i].copy_(gal[std::uniform_int_distribution<int>(0, i - 1)(rng)]);
    }
    const auto q = torch::randn({3}, torch::kFloat64);
    const auto r = rank_embeddings("q", 0, q, refs, pids, gal);

    oracle::Vec sims;
    const auto qv = oracle::to_mat(q.unsqueeze(0))[0];
    for (const auto& g : oracle::to_mat(gal)) sims.push_back(oracle::cosine(g, qv));
    const auto o = oracle::score_query(sims, refs, pids, 0);
    const std::vector<int> ks{1, 5, 10, 20};
    const auto c = cmc({r}, ks);
    for (int k : ks) worst = std::max(worst, std::abs(c.at(k) - (o.first_hit <= k ? 100.0 : 0.0)));
    worst = std::max(worst, std::abs(mean_average_precision({r}) - 100.0 * o.average_precision));
  }
  const double t = seconds_since(t0);
  return {worst <= 1e-9 && t < 10.0, "200 instances, max |diff| " + fmt("%.3g", worst) + ", " + fmt("%.2f", t) + " s"};
}

Outcome loss_oracles() {
  torch::manual_seed(77);
  std::mt19937_64 rng(77);
  double worst_e = 0.0;
  double worst_g = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const int P = std::uniform_int_distribution<int>(2, 10)(rng);
    const int D = std::uniform_int_distribution<int>(2, 32)(rng);
    const auto V = torch::randn({P, D}, torch::kFloat64);
    const auto I = torch::randn({P, D}, torch::kFloat64);
    const auto Vm = oracle::to_mat(V);
    const auto Im = oracle::to_mat(I);
    worst_e = std::max(worst_e, std::abs(extractor_loss(V, I).item<double>() - oracle::extractor_loss(Vm, Im)));
    worst_g = std::max(worst_g, std::abs(generator_loss(V, I).item<double>() - oracle::generator_loss(Vm, Im)));
  }
  return {worst_e <= 1e-6 && worst_g <= 1e-6,
          "50 batches each, extractor max |diff| " + fmt("%.3g", worst_e) + ", generator " + fmt("%.3g", worst_g)};
}

Outcome gradient_checks() {
  const auto t0 = Clock::now();
  ToyParams tp;
  tp.n_ids = 2;
  tp.per_id_per_modality = 2;
  tp.image_size = {64, 32};
  const Dataset ds = generate_toy_dataset(tp);
  ExtractorOptions eo;
  eo.fuse_channels = 4;
  eo.encoder_channels = 4;
  eo.feature_dim = 8;
  eo.pool_rows = 2;
  eo.pool_cols = 2;
  const auto vis = ds.of_modality(Modality::Visible);
  const auto ir = ds.of_modality(Modality::Infrared);
  std::vector<int> gv, gi;
  for (const auto* p : vis) gv.push_back(p->person_id - 1);
  for (const auto* p : ir) gi.push_back(p->person_id - 1);

  double worst_e = 0.0;
  {
    auto model = ExtractorModel::create(eo, 5);
    model.net->to(torch::kFloat64);
    const auto xv = stack_pixels(vis, 1).to(torch::kFloat64);
    const auto xi = stack_pixels(ir, 1).to(torch::kFloat64);
    auto objective = [&] {
      return extractor_loss(group_centroids(model.features(xv), gv, 2), group_centroids(model.features(xi), gi, 2));
    };
    for (const auto& item : model.net->named_parameters()) {
      const auto& name = item.key();
      const auto& param = item.value();
      const auto entries = oracle::sample_entries(param.numel(), 6, std::hash<std::string>{}(name));
      worst_e = std::max(worst_e, oracle::gradient_relative_error(param, objective, entries));
    }
  }

  double worst_g = 0.0;
  {
    auto extractor = ExtractorModel::create(eo, 3);
    extractor.net->to(torch::kFloat64);
    extractor.set_trainable(false);
    GeneratorOptions go;
    go.feature_dim = 8;
    go.z_dim = 4;
    go.embed_dim = 8;
    go.blocks = 1;
    go.heads = 2;
    go.grid = 2;
    go.token_size = 4;
    auto model = GeneratorModel::create(go, 4);
    model.net->to(torch::kFloat64);
    {
      torch::NoGradGuard guard;
      model.net->to_pixels->weight.normal_(0.0, 0.5);
    }
    const auto xv = stack_pixels(vis, 3).to(torch::kFloat64);
    const auto xi = stack_pixels(ir, 3).to(torch::kFloat64);
    torch::Tensor ir_cent;
    torch::Tensor conditions;
    {
      torch::NoGradGuard guard;
      ir_cent = group_centroids(extractor.features(xi), gi, 2);
      conditions = group_centroids(extractor.features(xv), gv, 2);
    }
    const auto z = torch::randn({2, 4}, torch::kFloat64);
    auto objective = [&] { return generator_objective(model, extractor, z, conditions, xv, gv, ir_cent, 0.1); };
    for (const auto& item : model.net->named_parameters()) {
      const auto& name = item.key();
      const auto& param = item.value();
      const auto entries = oracle::sample_entries(param.numel(), 6, std::hash<std::string>{}(name));
      worst_g = std::max(worst_g, oracle::gradient_relative_error(param, objective, entries));
    }
  }
  const double t = seconds_since(t0);
  return {worst_e <= 1e-3 && worst_g <= 1e-3 && t < 120.0,
          "max relative error extractor " + fmt("%.3g", worst_e) + ", generator " + fmt("%.3g", worst_g) + ", " +
              fmt("%.1f", t) + " s"};
}

Experiment benchmark(std::uint64_t seed, const fs::path& work) {
  const auto config = resolve_experiment_config(fs::path(EDGEATTACK_SOURCE_DIR) / "configs" / "toy_benchmark.json", {}, seed);
  return open_experiment(config, work / ("seed" + std::to_string(seed)), true);
}

struct SeedRun {
  std::vector<AttackReports> reports;
  double seconds = 0.0;
};

SeedRun run_pipeline(const Experiment& e) {
  const auto t0 = Clock::now();
  cmd_gen_data(e);
  cmd_train_extractor(e);
  cmd_train_generator(e);
  cmd_train_victim(e);
  SeedRun run;
  run.reports = cmd_attack(e);
  run.seconds = seconds_since(t0);
  return run;
}

Outcome extractor_margin(const Experiment& e) {
  const auto [model, prov] = load_extractor(e.extractor_checkpoint());
  const auto splits = load_splits(e);
  std::vector<const PersonImage*> images;
  for (const auto& im : splits.test.images) images.push_back(&im);
  const auto features = extract_all(images, model);
  double same = 0.0, diff = 0.0;
  int n_same = 0, n_diff = 0;
  for (std::size_t a = 0; a < features.size(); ++a) {
    if (images[a]->modality != Modality::Visible) continue;
    for (std::size_t b = 0; b < features.size(); ++b) {
      if (images[b]->modality != Modality::Infrared) continue;
      const double d = (features[a].vector - features[b].vector).norm().item<double>();
      if (images[a]->person_id == images[b]->person_id) {
        same += d;
        ++n_same;
      } else {
        diff += d;
        ++n_diff;
      }
    }
  }
  same /= n_same;
  diff /= n_diff;
  const double margin = diff - same;
  std::cout << "  held-out cross-modal distance: same-id " << fmt("%.4f", same) << ", different-id " << fmt("%.4f", diff)
            << ", margin " << fmt("%.4f", margin) << "\n";
  return {margin > 0.0, "seed 0 margin " + fmt("%.4f", margin) + " over " + std::to_string(images.size()) + " held-out images"};
}

Outcome victim_gate(const SeedRun& run) {
  double r1 = -1.0;
  for (const auto& r : run.reports) {
    if (r.pre.direction == Direction::VisToIr) r1 = r.pre.rank_r.at(1);
  }
  return {r1 >= 80.0 && run.seconds <= 900.0,
          "seed 0 pre-attack VIS->IR rank1 " + fmt("%.2f", r1) + ", pipeline " + fmt("%.0f", run.seconds) + " s"};
}

Outcome attack_efficacy(const std::map<std::uint64_t, SeedRun>& runs) {
  bool pass = true;
  std::string detail;
  for (const auto& [seed, run] : runs) {
    for (const auto& r : run.reports) {
      const double pre1 = r.pre.rank_r.at(1), post1 = r.post.rank_r.at(1);
      const bool ok = post1 <= 0.5 * pre1 && r.post.map_score <= 0.6 * r.pre.map_score;
      pass = pass && ok;
      std::cout << "  seed " << seed << " " << dir_name(r.pre.direction) << ": rank1 " << fmt("%.2f", pre1) << " -> "
                << fmt("%.2f", post1) << " (limit " << fmt("%.2f", 0.5 * pre1) << "), mAP " << fmt("%.2f", r.pre.map_score)
                << " -> " << fmt("%.2f", r.post.map_score) << " (limit " << fmt("%.2f", 0.6 * r.pre.map_score) << ")"
                << (ok ? "" : "  <-- fails") << "\n";
      if (!ok) detail += (detail.empty() ? "" : "; ") + ("seed " + std::to_string(seed) + " " + dir_name(r.pre.direction));
    }
  }
  return {pass, pass ? "3 seeds x 2 directions within limits" : "outside limits: " + detail};
}

Outcome ablation_trend(const Experiment& e) {
  const auto table = cmd_ablate(e);
  bool pass = true;
  std::string detail;
  for (const auto& clean : table.unattacked) {
    std::vector<double> maps;
    for (const auto& row : table.rows) {
      if (row.direction == clean.direction) maps.push_back(row.report.map_score);
    }
    int inversions = 0;
    bool too_large = false;
    for (std::size_t i = 1; i < maps.size(); ++i) {
      if (maps[i] < maps[i - 1]) {
        ++inversions;
        too_large = too_large || maps[i - 1] - maps[i] > 2.0;
      }
    }
    const double recovery = maps.back() / clean.map_score;
    const bool ok = inversions <= 1 && !too_large && recovery >= 0.7;
    pass = pass && ok;
    std::cout << "  " << dir_name(clean.direction) << " mAP by removal set:";
    for (double m : maps) std::cout << " " << fmt("%.2f", m);
    std::cout << " | unattacked " << fmt("%.2f", clean.map_score) << ", recovery " << fmt("%.1f", 100.0 * recovery) << "%\n";
    detail += (detail.empty() ? "" : "; ") + dir_name(clean.direction) + " inversions " + std::to_string(inversions) +
              ", recovery " + fmt("%.1f", 100.0 * recovery) + "%";
  }
  return {pass, detail};
}

std::map<std::string, std::string> report_bytes(const Experiment& e) {
  std::map<std::string, std::string> out;
  for (const auto& f : fs::recursive_directory_iterator(e.reports())) {
    const auto ext = f.path().extension();
    if (f.is_regular_file() && (ext == ".json" || ext == ".csv") && f.path().parent_path() != e.reports()) {
      out[fs::relative(f.path(), e.reports()).string()] = slurp(f.path());
    }
  }
  for (const auto& f : fs::directory_iterator(e.patches())) {
    if (f.is_regular_file()) out["patches/" + f.path().filename().string()] = slurp(f.path());
  }
  return out;
}

Outcome determinism(const Experiment& e) {
  cmd_attack(e);
  const auto first = report_bytes(e);
  cmd_attack(e);
  const auto second = report_bytes(e);
  return {!first.empty() && first == second, std::to_string(first.size()) + " report and patch files compared byte for byte"};
}

std::set<fs::path> include_closure(const std::vector<fs::path>& roots) {
  const std::regex inc(R"re(#include\s+"([^"]+)")re");
  std::set<fs::path> seen;
  std::vector<fs::path> todo = roots;
  const fs::path src = EDGEATTACK_SOURCE_DIR;
  while (!todo.empty()) {
    const fs::path p = todo.back();
    todo.pop_back();
    if (!seen.insert(p).second) continue;
    const std::string text = slurp(p);
    for (std::sregex_iterator it(text.begin(), text.end(), inc), end; it != end; ++it) {
      const std::string name = (*it)[1];
      for (const fs::path& cand : {src / "include" / name, p.parent_path() / name}) {
        if (fs::exists(cand)) {
          todo.push_back(fs::canonical(cand));
          break;
        }
      }
    }
  }
  return seen;
}

std::string capture(const std::string& cmd, int& status) {
  std::string out;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (pipe == nullptr) {
    status = -1;
    return out;
  }
  std::array<char, 4096> buf{};
  while (fgets(buf.data(), buf.size(), pipe) != nullptr) out += buf.data();
  const int raw = pclose(pipe);
  status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return out;
}

Outcome black_box(const fs::path& work) {
  const fs::path src = EDGEATTACK_SOURCE_DIR;
  std::vector<fs::path> roots;
  for (const char* f : {"src/edge_extractor.cpp", "src/patch_generator.cpp", "tools/blackbox_generator.cpp"}) {
    roots.push_back(fs::canonical(src / f));
  }
  const std::regex victim_ref(R"(VictimModel|ToyVictim|ExchangeVictim|victim\.hpp|evaluation\.hpp|\brank\s*\()");
  std::vector<std::string> offenders;
  const auto closure = include_closure(roots);
  for (const auto& p : closure) {
    const std::string text = slurp(p);
    if (std::regex_search(text, victim_ref)) offenders.push_back(p.filename().string());
  }

  int status = 0;
  const std::string symbols = capture("nm -C " + std::string(EDGEATTACK_BLACKBOX) + " 2>/dev/null", status);
  const bool nm_ok = status == 0 && !symbols.empty();
  const bool victim_symbols = std::regex_search(symbols, std::regex(R"(edgeattack::(ToyVictim|ExchangeVictim|VictimModel|train_toy_victim|evaluate\())"));

  const fs::path out = work / "blackbox" / "generator.pt";
  fs::remove_all(out.parent_path());
  const std::string cmd = std::string(EDGEATTACK_BLACKBOX) + " --out " + out.string() +
                          " --ids 4 --per-id 2 --extractor-epochs 2 --generator-epochs 2 >/dev/null 2>&1";
  const int raw = std::system(cmd.c_str());
  const bool trained = WIFEXITED(raw) && WEXITSTATUS(raw) == 0 && fs::exists(out);

  std::string detail = std::to_string(closure.size()) + " files in include closure, ";
  detail += offenders.empty() ? "no victim references" : "victim references in";
  for (const auto& o : offenders) detail += " " + o;
  detail += nm_ok ? (victim_symbols ? ", victim symbols linked" : ", no victim symbols linked") : ", nm unavailable";
  detail += trained ? ", victim-free generator training succeeded" : ", victim-free generator training failed";
  return {offenders.empty() && nm_ok && !victim_symbols && trained, detail};
}

}  // namespace

int main() {
  torch::set_num_threads(1);
  const fs::path work = EDGEATTACK_WORK_DIR;
  fs::remove_all(work);
  fs::create_directories(work);
  std::map<int, std::pair<std::string, Outcome>> results;
  auto record = [&](int id, const std::string& name, auto&& fn) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& ex) {
      o = {false, std::string("error: ") + ex.what()};
    }
    results[id] = {name, o};
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << name << "): " << o.detail << std::endl;
  };

  record(1, "metric oracles", metric_oracles);
  record(2, "loss oracles", loss_oracles);
  record(3, "gradient checks", gradient_checks);

  std::map<std::uint64_t, SeedRun> runs;
  std::string pipeline_error;
  for (std::uint64_t seed : {0, 1, 2}) {
    try {
      runs[seed] = run_pipeline(benchmark(seed, work));
    } catch (const std::exception& ex) {
      pipeline_error = ex.what();
      break;
    }
  }
  auto need_runs = [&](std::size_t n) {
    if (runs.size() < n) throw std::runtime_error("pipeline failed: " + pipeline_error);
  };
  const Experiment seed0 = benchmark(0, work);

  record(4, "extractor discriminativity", [&] { need_runs(1); return extractor_margin(seed0); });
  record(5, "victim gate", [&] { need_runs(1); return victim_gate(runs.at(0)); });
  record(6, "attack efficacy", [&] { need_runs(3); return attack_efficacy(runs); });
  record(7, "ablation trend", [&] { need_runs(1); return ablation_trend(seed0); });
  record(8, "determinism", [&] { need_runs(1); return determinism(seed0); });
  record(9, "black-box property", [&] { return black_box(work); });

  int failed = 0;
  for (const auto& [id, r] : results) failed += r.second.pass ? 0 : 1;
  std::cout << (failed == 0 ? "all criteria pass" : std::to_string(failed) + " criteria fail") << std::endl;
  return failed == 0 ? 0 : 1;
}
