#include "edgeattack/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "edgeattack/common.hpp"

namespace fs = std::filesystem;

namespace edgeattack {

namespace {

int first_hit(const RankingResult& r) {
  if (r.correct_positions.empty()) throw Error("query has no ground truth: " + r.query_ref);
  return *std::min_element(r.correct_positions.begin(), r.correct_positions.end());
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

nlohmann::json ranks_to_json(const std::map<int, double>& m) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [r, v] : m) j[std::to_string(r)] = v;
  return j;
}

std::map<int, double> ranks_from_json(const nlohmann::json& j) {
  std::map<int, double> m;
  for (const auto& [k, v] : j.items()) m[std::stoi(k)] = v.get<double>();
  return m;
}

}  // namespace

std::string format_metric(double value) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", value);
  return buf;
}

std::map<int, double> cmc(const std::vector<RankingResult>& rankings, const std::vector<int>& r_values) {
  std::map<int, double> out;
  for (int r : r_values) out[r] = 0.0;
  if (rankings.empty()) return out;
  std::vector<int> firsts;
  for (const auto& rk : rankings) firsts.push_back(first_hit(rk));
  for (int r : r_values) {
    const auto hits = std::count_if(firsts.begin(), firsts.end(), [r](int f) { return f <= r; });
    out[r] = 100.0 * static_cast<double>(hits) / static_cast<double>(rankings.size());
  }
  return out;
}

double mean_average_precision(const std::vector<RankingResult>& rankings) {
  if (rankings.empty()) return 0.0;
  double total = 0.0;
  for (const auto& rk : rankings) {
    first_hit(rk);
    std::vector<int> pos = rk.correct_positions;
    std::sort(pos.begin(), pos.end());
    double ap = 0.0;
    for (std::size_t i = 0; i < pos.size(); ++i) ap += static_cast<double>(i + 1) / pos[i];
    total += ap / static_cast<double>(pos.size());
  }
  return 100.0 * total / static_cast<double>(rankings.size());
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

nlohmann::json EvalReport::to_json() const {
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& r : per_run) {
    runs.push_back({{"run", r.run},
                    {"run_seed", r.run_seed},
                    {"n_queries", r.n_queries},
                    {"gallery_size", r.gallery_size},
                    {"rank_r", ranks_to_json(r.rank_r)},
                    {"map", r.map_score}});
  }
  return {{"direction", std::string(to_string(direction))},
          {"protocol", std::string(to_string(protocol))},
          {"n_runs", n_runs},
          {"seed", seed},
          {"attacked", attacked},
          {"victim", victim},
          {"config_hash", config_hash},
          {"r_values", r_values},
          {"rank_r", ranks_to_json(rank_r)},
          {"map", map_score},
          {"per_run", runs}};
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
  EvalReport r;
  r.direction = parse_direction(j.at("direction").get<std::string>());
  r.protocol = parse_protocol(j.at("protocol").get<std::string>());
  r.n_runs = j.at("n_runs");
  r.seed = j.at("seed");
  r.attacked = j.value("attacked", false);
  r.victim = j.value("victim", "");
  r.config_hash = j.value("config_hash", "");
  r.r_values = j.at("r_values").get<std::vector<int>>();
  r.rank_r = ranks_from_json(j.at("rank_r"));
  r.map_score = j.at("map");
  for (const auto& pr : j.at("per_run")) {
    RunMetrics m;
    m.run = pr.at("run");
    m.run_seed = pr.at("run_seed");
    m.n_queries = pr.at("n_queries");
    m.gallery_size = pr.at("gallery_size");
    m.rank_r = ranks_from_json(pr.at("rank_r"));
    m.map_score = pr.at("map");
    r.per_run.push_back(m);
  }
  return r;
}

void EvalReport::write_json(const fs::path& path) const { write_text(path, to_json().dump(2) + "\n"); }

void EvalReport::write_csv(const fs::path& path) const {
  std::string s = "run";
  for (int r : r_values) s += ",rank" + std::to_string(r);
  s += ",map\n";
  auto row = [&](const std::string& label, const std::map<int, double>& ranks, double map) {
    s += label;
    for (int r : r_values) s += "," + format_metric(ranks.at(r));
    s += "," + format_metric(map) + "\n";
  };
  for (const auto& pr : per_run) row(std::to_string(pr.run), pr.rank_r, pr.map_score);
  row("mean", rank_r, map_score);
  write_text(path, s);
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

std::vector<PersonImage> patch_visible_images(const std::vector<PersonImage>& images, const PatchSource& source) {
  if (!source.generator || !source.extractor) throw Error("patch source needs a generator and an extractor");
  std::vector<const PersonImage*> ptrs;
  for (const auto& im : images) ptrs.push_back(&im);
  const auto conditions = identity_conditions(ptrs, *source.extractor);
  std::map<int, AdversarialPatch> patches;
  for (const auto& [pid, c] : conditions) {
    EdgeFeature f;
    f.vector = c;
    f.person_id = pid;
    patches.emplace(pid, generate_patch(f, *source.generator, source.z_seed));
  }
  std::vector<PersonImage> out;
  out.reserve(images.size());
  for (const auto& im : images) {
    if (im.modality != Modality::Visible) {
      out.push_back(im);
      continue;
    }
    out.push_back(apply_patch(im, patches.at(im.person_id)));
    out.back().source_path = "patched/" + im.source_path;
  }
  return out;
}

EvalReport evaluate(const VictimModel& victim, const Dataset& dataset, const EvalOptions& options,
                    const std::optional<PatchSource>& patch_source) {
  if (options.n_runs < 1) throw ConfigError("n_runs must be positive");
  std::vector<int> r_values = options.r_values;
  std::sort(r_values.begin(), r_values.end());
  r_values.erase(std::unique(r_values.begin(), r_values.end()), r_values.end());
  if (r_values.empty() || r_values.front() < 1) throw ConfigError("r_values must be positive");

  EvalReport report;
  report.direction = options.direction;
  report.protocol = options.protocol;
  report.n_runs = options.n_runs;
  report.seed = options.seed;
  report.attacked = patch_source.has_value();
  report.victim = victim.name();
  report.config_hash = options.config_hash;
  report.r_values = r_values;
  for (int r : r_values) report.rank_r[r] = 0.0;

  for (int run = 0; run < options.n_runs; ++run) {
    const std::uint64_t run_seed = options.seed + static_cast<std::uint64_t>(run);
    auto split = split_query_gallery(dataset, options.direction, options.protocol, run_seed);
    if (patch_source) {
      auto& side = options.direction == Direction::VisToIr ? split.queries : split.gallery;
      side = patch_visible_images(side, *patch_source);
    }
    std::vector<const PersonImage*> qp, gp;
    std::vector<std::string> grefs;
    std::vector<int> gpids;
    for (const auto& q : split.queries) qp.push_back(&q);
    for (const auto& g : split.gallery) {
      gp.push_back(&g);
      grefs.push_back(g.source_path);
      gpids.push_back(g.person_id);
    }
    const auto qemb = victim.embed(qp);
    const auto gemb = victim.embed(gp);
    std::vector<RankingResult> rankings;
    for (std::size_t i = 0; i < split.queries.size(); ++i) {
      const auto& q = split.queries[i];
      if (dataset.layout == Layout::Sysu) {
        std::vector<int64_t> keep;
        std::vector<std::string> refs;
        std::vector<int> pids;
        for (std::size_t g = 0; g < split.gallery.size(); ++g) {
          const auto& gi = split.gallery[g];
          if (gi.person_id == q.person_id && gi.camera_id == q.camera_id) continue;
          keep.push_back(static_cast<int64_t>(g));
          refs.push_back(grefs[g]);
          pids.push_back(gpids[g]);
        }
        rankings.push_back(rank_embeddings(q.source_path, q.person_id, qemb[static_cast<int64_t>(i)], refs, pids,
                                           gemb.index_select(0, torch::tensor(keep))));
      } else {
        rankings.push_back(rank_embeddings(q.source_path, q.person_id, qemb[static_cast<int64_t>(i)], grefs, gpids, gemb));
      }
    }
    RunMetrics m;
    m.run = run;
    m.run_seed = run_seed;
    m.n_queries = static_cast<int>(rankings.size());
    m.gallery_size = static_cast<int>(split.gallery.size());
    m.rank_r = cmc(rankings, r_values);
    m.map_score = mean_average_precision(rankings);
    for (int r : r_values) report.rank_r[r] += m.rank_r[r] / options.n_runs;
    report.map_score += m.map_score / options.n_runs;
    report.per_run.push_back(m);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Degradation
// ---------------------------------------------------------------------------

DegradationReport degradation_report(const EvalReport& pre, const EvalReport& post) {
  if (pre.direction != post.direction || pre.protocol != post.protocol || pre.n_runs != post.n_runs ||
      pre.seed != post.seed || pre.r_values != post.r_values) {
    throw Error("reports not comparable: direction, protocol, runs, seed and ranks must match");
  }
  DegradationReport d;
  d.direction = pre.direction;
  d.protocol = pre.protocol;
  d.config_hash = post.config_hash;
  auto add = [&](const std::string& name, double a, double b) {
    DegradationRow row{name, a, b, a - b, std::nullopt};
    if (a != 0.0) row.relative_drop = (a - b) / a;
    d.rows.push_back(row);
  };
  for (int r : pre.r_values) add("rank" + std::to_string(r), pre.rank_r.at(r), post.rank_r.at(r));
  add("map", pre.map_score, post.map_score);
  return d;
}

nlohmann::json DegradationReport::to_json() const {
  nlohmann::json rows_json = nlohmann::json::array();
  for (const auto& r : rows) {
    rows_json.push_back({{"metric", r.metric},
                         {"pre", r.pre},
                         {"post", r.post},
                         {"drop", r.drop},
                         {"relative_drop", r.relative_drop ? nlohmann::json(*r.relative_drop) : nlohmann::json()}});
  }
  return {{"direction", std::string(to_string(direction))},
          {"protocol", std::string(to_string(protocol))},
          {"config_hash", config_hash},
          {"rows", rows_json}};
}

void DegradationReport::write_json(const fs::path& path) const { write_text(path, to_json().dump(2) + "\n"); }

void DegradationReport::write_csv(const fs::path& path) const {
  std::string s = "metric,pre,post,drop,relative_drop\n";
  for (const auto& r : rows) {
    s += r.metric + "," + format_metric(r.pre) + "," + format_metric(r.post) + "," + format_metric(r.drop) + ",";
    s += r.relative_drop ? format_metric(100.0 * *r.relative_drop) + "%" : std::string("—");
    s += "\n";
  }
  write_text(path, s);
}

void write_cmc_plot(const std::vector<std::pair<std::string, EvalReport>>& curves, const fs::path& path) {
  const int W = 640, H = 400, left = 60, right = 20, top = 20, bottom = 50;
  cv::Mat img(H, W, CV_8UC3, cv::Scalar(255, 255, 255));
  int max_r = 1;
  for (const auto& [name, rep] : curves) {
    if (!rep.r_values.empty()) max_r = std::max(max_r, rep.r_values.back());
  }
  auto px = [&](double r) { return left + static_cast<int>((r - 1) / std::max(1, max_r - 1) * (W - left - right)); };
  auto py = [&](double v) { return top + static_cast<int>((100.0 - v) / 100.0 * (H - top - bottom)); };
  cv::line(img, {left, top}, {left, H - bottom}, cv::Scalar(0, 0, 0));
  cv::line(img, {left, H - bottom}, {W - right, H - bottom}, cv::Scalar(0, 0, 0));
  for (int v = 0; v <= 100; v += 25) {
    cv::putText(img, std::to_string(v), {10, py(v) + 4}, cv::FONT_HERSHEY_SIMPLEX, 0.4, cv::Scalar(0, 0, 0));
  }
  cv::putText(img, "rank", {W / 2, H - 12}, cv::FONT_HERSHEY_SIMPLEX, 0.5, cv::Scalar(0, 0, 0));
  const cv::Scalar colors[] = {{200, 60, 30}, {30, 30, 200}, {30, 150, 30}, {150, 30, 150}, {0, 140, 220}};
  for (std::size_t c = 0; c < curves.size(); ++c) {
    const auto& rep = curves[c].second;
    const auto color = colors[c % 5];
    cv::Point prev(-1, -1);
    for (int r : rep.r_values) {
      cv::Point p(px(r), py(rep.rank_r.at(r)));
      cv::circle(img, p, 3, color, cv::FILLED);
      if (prev.x >= 0) cv::line(img, prev, p, color, 2);
      cv::putText(img, std::to_string(r), {p.x - 4, H - bottom + 15}, cv::FONT_HERSHEY_SIMPLEX, 0.4,
                  cv::Scalar(0, 0, 0));
      prev = p;
    }
    cv::putText(img, curves[c].first, {W - 200, top + 20 + 18 * static_cast<int>(c)}, cv::FONT_HERSHEY_SIMPLEX, 0.5,
                color);
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), img)) throw Error("cannot write plot " + path.string());
}

}  // namespace edgeattack
