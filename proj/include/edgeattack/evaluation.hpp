#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "edgeattack/dataset.hpp"
#include "edgeattack/edge_extractor.hpp"
#include "edgeattack/patch_generator.hpp"
#include "edgeattack/victim.hpp"

namespace edgeattack {

inline const std::vector<int> kDefaultRanks{1, 5, 10, 20};

/// Percentage of queries whose first correct match is within the top r.
std::map<int, double> cmc(const std::vector<RankingResult>& rankings, const std::vector<int>& r_values);

/// Mean over queries of average precision, as a percentage.
double mean_average_precision(const std::vector<RankingResult>& rankings);

struct RunMetrics {
  int run = 0;
  std::uint64_t run_seed = 0;
  int n_queries = 0;
  int gallery_size = 0;
  std::map<int, double> rank_r;
  double map_score = 0.0;
};

struct EvalReport {
  Direction direction = Direction::VisToIr;
  Protocol protocol = Protocol::All;
  int n_runs = 1;
  std::uint64_t seed = 0;
  bool attacked = false;
  std::string victim;
  std::string config_hash;
  std::vector<int> r_values = kDefaultRanks;
  std::map<int, double> rank_r;  // mean over runs
  double map_score = 0.0;        // mean over runs
  std::vector<RunMetrics> per_run;

  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
  void write_json(const std::filesystem::path& path) const;
  void write_csv(const std::filesystem::path& path) const;
};

/// Attacker side of an evaluation: patches come from `generator`, conditioned
/// on each identity's mean clean visible edge feature under `extractor`.
struct PatchSource {
  const GeneratorModel* generator = nullptr;
  const ExtractorModel* extractor = nullptr;
  std::uint64_t z_seed = 0;
};

/// Patches every visible image in `images` (other modalities pass through).
/// Patched images get source_path "patched/<original>".
std::vector<PersonImage> patch_visible_images(const std::vector<PersonImage>& images, const PatchSource& source);

struct EvalOptions {
  Direction direction = Direction::VisToIr;
  Protocol protocol = Protocol::All;
  int n_runs = 1;
  std::uint64_t seed = 0;
  std::vector<int> r_values = kDefaultRanks;
  std::string config_hash;
};

/// Runs n_runs query/gallery splits (run seed = seed + run index), ranking all
/// queries with the victim. With a patch source, every visible image involved
/// is patched: queries for VIS->IR, gallery for IR->VIS. SYSU-layout data drops
/// gallery entries sharing the query's identity and camera.
EvalReport evaluate(const VictimModel& victim, const Dataset& dataset, const EvalOptions& options,
                    const std::optional<PatchSource>& patch_source = std::nullopt);

struct DegradationRow {
  std::string metric;
  double pre = 0.0;
  double post = 0.0;
  double drop = 0.0;
  std::optional<double> relative_drop;  // (pre - post) / pre, absent when pre == 0
};

struct DegradationReport {
  Direction direction = Direction::VisToIr;
  Protocol protocol = Protocol::All;
  std::string config_hash;
  std::vector<DegradationRow> rows;

  nlohmann::json to_json() const;
  void write_json(const std::filesystem::path& path) const;
  void write_csv(const std::filesystem::path& path) const;
};

/// Side-by-side comparison. Throws "reports not comparable" when direction,
/// protocol, runs, seed or rank list differ.
DegradationReport degradation_report(const EvalReport& pre, const EvalReport& post);

/// CMC curves (rank r vs percentage) for one or more labeled reports.
void write_cmc_plot(const std::vector<std::pair<std::string, EvalReport>>& curves, const std::filesystem::path& path);

/// Fixed-precision number formatting used by every CSV writer.
std::string format_metric(double value);

}  // namespace edgeattack
