// Command-line front end: one verb per pipeline stage.
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <c10/util/Logging.h>
#include <torch/torch.h>

#include "edgeattack/common.hpp"
#include "edgeattack/pipeline.hpp"

using namespace edgeattack;

namespace {

void print_attack(const std::vector<AttackReports>& reports) {
  for (const auto& r : reports) {
    std::cout << to_string(r.pre.direction) << " (" << to_string(r.pre.protocol) << ")\n";
    for (const auto& row : r.degradation.rows) {
      std::cout << "  " << row.metric << ": " << format_metric(row.pre) << " -> " << format_metric(row.post)
                << " (drop " << format_metric(row.drop) << ")\n";
    }
  }
}

void print_ablation(const AblationTable& table) {
  for (const auto& row : table.rows) {
    std::cout << to_string(row.direction) << " removed " << removal_label(row.removed) << ": rank1 "
              << format_metric(row.report.rank_r.at(row.report.r_values.front())) << " mAP "
              << format_metric(row.report.map_score) << "\n";
  }
  for (const auto& u : table.unattacked) {
    std::cout << to_string(u.direction) << " no attack: mAP " << format_metric(u.map_score) << "\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Edge-feature adversarial patch pipeline for visible-infrared re-identification"};
  app.require_subcommand(1);

  std::optional<std::string> config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> direction;
  bool force = false;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "experiment config (JSON)");
  app.add_option("--seed", seed, "experiment seed");
  app.add_option("--out", out, "experiment directory (default runs/<name>)");
  app.add_flag("--force", force, "overwrite existing outputs");
  app.add_option("--set", overrides, "override, e.g. --set generator.train.epochs=10")->take_all();

  auto* gen_data = app.add_subcommand("gen-data", "generate and export the toy dataset");
  auto* train_ext = app.add_subcommand("train-extractor", "train the edge feature extractor");
  auto* train_gen = app.add_subcommand("train-generator", "train the patch generator against the extractor");
  auto* train_vic = app.add_subcommand("train-victim", "train the toy victim model");
  auto* attack = app.add_subcommand("attack", "evaluate the victim with and without patches");
  auto* ablate = app.add_subcommand("ablate", "edge-level ablation table");
  auto* report = app.add_subcommand("report", "rebuild tables and plots from stored reports");
  for (auto* sub : {attack, ablate}) {
    sub->add_option("--direction", direction, "vis_to_ir, ir_to_vis or both");
  }
  for (auto* sub : {gen_data, train_ext, train_gen, train_vic, attack, ablate, report}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  torch::set_num_threads(1);
  try {
    if (direction) overrides.push_back("evaluation.direction=\"" + *direction + "\"");
    const auto config = resolve_experiment_config(
        config_path ? std::optional<std::filesystem::path>(*config_path) : std::nullopt, overrides, seed);
    const Experiment experiment =
        open_experiment(config, out ? std::optional<std::filesystem::path>(*out) : std::nullopt, force);

    if (gen_data->parsed()) {
      std::cout << cmd_gen_data(experiment).string() << "\n";
    } else if (train_ext->parsed()) {
      std::cout << cmd_train_extractor(experiment).string() << "\n";
    } else if (train_gen->parsed()) {
      std::cout << cmd_train_generator(experiment).string() << "\n";
    } else if (train_vic->parsed()) {
      std::cout << cmd_train_victim(experiment).string() << "\n";
    } else if (attack->parsed()) {
      print_attack(cmd_attack(experiment));
    } else if (ablate->parsed()) {
      print_ablation(cmd_ablate(experiment));
    } else if (report->parsed()) {
      std::cout << cmd_report(experiment);
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const DependencyMissing& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const TrainingDiverged& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
