#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "edgeattack/dataset.hpp"
#include "edgeattack/evaluation.hpp"

namespace edgeattack {

/// Every key the pipeline understands, with its default value.
nlohmann::json default_experiment_config();

/// Applies one `section.key=value` assignment. The value is parsed as JSON
/// when possible and taken as a string otherwise. Unknown keys are rejected.
void apply_override(nlohmann::json& config, const std::string& assignment);

/// Defaults, then the file (if any), then overrides, then the seed (if any).
/// Validates the result; throws ConfigError on anything malformed.
nlohmann::json resolve_experiment_config(const std::optional<std::filesystem::path>& config_file,
                                         const std::vector<std::string>& overrides,
                                         const std::optional<std::uint64_t>& seed);

/// SHA-256 of the canonical (sorted, compact) serialization.
std::string experiment_config_hash(const nlohmann::json& config);

/// One experiment directory: runs/<name> unless an explicit directory is given.
struct Experiment {
  nlohmann::json config;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::filesystem::path dir;
  bool force = false;

  std::filesystem::path data_dir() const;
  std::filesystem::path checkpoints() const { return dir / "checkpoints"; }
  std::filesystem::path features() const { return dir / "features"; }
  std::filesystem::path patches() const { return dir / "patches"; }
  std::filesystem::path reports() const { return dir / "reports"; }
  std::filesystem::path extractor_checkpoint() const { return checkpoints() / "extractor.pt"; }
  std::filesystem::path generator_checkpoint() const { return checkpoints() / "generator.pt"; }
  std::filesystem::path victim_checkpoint() const { return checkpoints() / "victim.pt"; }

  /// {config_hash, seed} block embedded in every artifact.
  nlohmann::json provenance() const;
};

Experiment open_experiment(const nlohmann::json& config, const std::optional<std::filesystem::path>& out,
                           bool force = false);

/// Training and evaluation halves of the configured dataset.
struct DatasetSplits {
  Dataset train;
  Dataset test;
};
DatasetSplits load_splits(const Experiment& experiment);

std::filesystem::path cmd_gen_data(const Experiment& experiment);
std::filesystem::path cmd_train_extractor(const Experiment& experiment);
std::filesystem::path cmd_train_generator(const Experiment& experiment);
std::filesystem::path cmd_train_victim(const Experiment& experiment);

struct AttackReports {
  EvalReport pre;
  EvalReport post;
  DegradationReport degradation;
};

/// Pre/post evaluation per configured direction ("both" gives two entries).
std::vector<AttackReports> cmd_attack(const Experiment& experiment);

struct AblationRow {
  std::set<int> removed;
  Direction direction = Direction::VisToIr;
  EvalReport report;
};

struct AblationTable {
  std::vector<AblationRow> rows;
  std::vector<EvalReport> unattacked;  // one per direction

  nlohmann::json to_json() const;
  void write_csv(const std::filesystem::path& path) const;
};

/// Row label used in the table: "none", "L5", "L4,L5", ..., "all".
std::string removal_label(const std::set<int>& removed);

/// For each removal set, retrains the generator against the ablated extractor
/// and evaluates its patches. The empty set reuses the trained generator.
AblationTable cmd_ablate(const Experiment& experiment);

/// Rebuilds tables and plots from the stored report JSON files and returns a
/// plain-text summary.
std::string cmd_report(const Experiment& experiment);

}  // namespace edgeattack
