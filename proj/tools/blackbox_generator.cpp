// Attacker-only build: trains the edge extractor and the patch generator
// without the victim or evaluation libraries being linked in.
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>
#include <torch/torch.h>

#include "edgeattack/common.hpp"
#include "edgeattack/dataset.hpp"
#include "edgeattack/edge_extractor.hpp"
#include "edgeattack/patch_generator.hpp"

using namespace edgeattack;

int main(int argc, char** argv) {
  CLI::App app{"Train extractor and patch generator with no victim available"};
  std::string out;
  std::uint64_t seed = 0;
  int n_ids = 8;
  int per_id = 4;
  int extractor_epochs = 50;
  int generator_epochs = 40;
  app.add_option("--out", out, "generator checkpoint to write")->required();
  app.add_option("--seed", seed);
  app.add_option("--ids", n_ids, "toy identities");
  app.add_option("--per-id", per_id, "toy images per identity and modality");
  app.add_option("--extractor-epochs", extractor_epochs);
  app.add_option("--generator-epochs", generator_epochs);
  CLI11_PARSE(app, argc, argv);

  torch::set_num_threads(1);
  try {
    ToyParams params;
    params.n_ids = n_ids;
    params.per_id_per_modality = per_id;
    params.seed = seed;
    const Dataset data = generate_toy_dataset(params);

    ExtractorTrainConfig ec;
    ec.train.epochs = extractor_epochs;
    ec.train.seed = seed;
    const auto extractor = train_extractor(data, ec).model;

    GeneratorTrainConfig gc;
    gc.train.epochs = generator_epochs;
    gc.train.seed = seed;
    gc.options.feature_dim = extractor.feature_dim();
    const auto result = train_generator(data, extractor, gc);
    save_generator(result.model, out, {{"seed", seed}, {"stage", "generator"}});
    std::cout << "final patched distance " << result.curve.epochs.back().monitor << "\n" << out << "\n";
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
