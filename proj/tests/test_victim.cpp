#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "edgeattack/checkpoint.hpp"
#include "edgeattack/evaluation.hpp"
#include "edgeattack/victim.hpp"
#include "oracles.hpp"

using namespace edgeattack;
namespace fs = std::filesystem;

namespace {

Dataset small_toy(int ids, int per) {
  ToyParams p;
  p.n_ids = ids;
  p.per_id_per_modality = per;
  return generate_toy_dataset(p);
}

std::shared_ptr<ToyVictim> untrained_victim(const Dataset& ds) {
  VictimTrainConfig cfg;
  cfg.train.epochs = 0;
  return train_toy_victim(ds, cfg).model;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

}  // namespace

TEST_CASE("toy victim embeddings: shape, determinism, finiteness") {
  const Dataset ds = small_toy(3, 2);
  const auto victim = untrained_victim(ds);
  const auto& im = ds.images.front();
  const auto a = embed(im, *victim);
  CHECK(a.size(0) == victim->embedding_dim());
  CHECK(torch::equal(a, embed(im, *victim)));
  PersonImage noise = im;
  torch::manual_seed(1);
  noise.pixels = torch::rand_like(im.pixels);
  const auto n = embed(noise, *victim).norm().item<double>();
  CHECK(std::isfinite(n));
  CHECK(n > 0.0);
  PersonImage wrong = im;
  wrong.pixels = torch::rand({3, 64, 64});
  CHECK_THROWS_WITH_AS(victim->embed({&wrong}), doctest::Contains("victim input shape mismatch"), Error);
}

TEST_CASE("ranking: self-match first, order invariance, brute-force agreement") {
  const Dataset ds = small_toy(5, 2);
  const auto victim = untrained_victim(ds);
  std::vector<PersonImage> gallery(ds.images.begin(), ds.images.begin() + 10);
  const auto r = rank(gallery[3], gallery, *victim);
  CHECK(r.ordered_gallery.front().first == gallery[3].source_path);
  CHECK(r.ordered_gallery.front().second == doctest::Approx(1.0).epsilon(1e-9));

  auto shuffled = gallery;
  std::reverse(shuffled.begin(), shuffled.end());
  CHECK(rank(gallery[3], shuffled, *victim).ordered_gallery == r.ordered_gallery);

  // Oracle: cosine in double, then sort by (-similarity, identifier).
  const auto q = oracle::to_mat(embed(gallery[3], *victim).unsqueeze(0))[0];
  std::vector<std::pair<double, std::string>> expected;
  for (const auto& g : gallery) expected.emplace_back(-oracle::cosine(oracle::to_mat(embed(g, *victim).unsqueeze(0))[0], q), g.source_path);
  std::sort(expected.begin(), expected.end());
  for (std::size_t i = 0; i < expected.size(); ++i) {
    CHECK(r.ordered_gallery[i].first == expected[i].second);
    CHECK(r.ordered_gallery[i].second == doctest::Approx(-expected[i].first).epsilon(1e-9));
  }
}

TEST_CASE("training is reproducible; untrained victim is near chance") {
  const Dataset ds = small_toy(8, 2);
  VictimTrainConfig cfg;
  cfg.train.epochs = 0;
  const auto untrained = train_toy_victim(ds, cfg).model;
  EvalOptions o;
  const auto base = evaluate(*untrained, ds, o);
  CHECK(base.rank_r.at(1) <= 50.0);

  cfg.train.epochs = 2;
  const auto a = train_toy_victim(ds, cfg);
  const auto b = train_toy_victim(ds, cfg);
  CHECK(parameter_fingerprint(*a.model->net()) == parameter_fingerprint(*b.model->net()));
  CHECK(a.model->config_hash() == b.model->config_hash());
  CHECK(a.curve.monitor_name == "train_rank1");

  const fs::path dir = fresh_dir("edgeattack_victim_ckpt");
  save_toy_victim(*a.model, dir / "v.pt", {{"seed", 0}});
  const auto loaded = load_toy_victim(dir / "v.pt");
  const auto& im = ds.images.front();
  CHECK(torch::equal(embed(im, *loaded), embed(im, *a.model)));
  CHECK(loaded->config_hash() == a.model->config_hash());
}

TEST_CASE("embedding exchange round trip and errors") {
  const Dataset ds = small_toy(3, 2);
  const auto victim = untrained_victim(ds);
  std::vector<const PersonImage*> ptrs;
  for (const auto& im : ds.images) ptrs.push_back(&im);
  const fs::path dir = fresh_dir("edgeattack_exchange");
  write_embedding_exchange(ptrs, *victim, dir / "all.jsonl");
  const auto ex = external_victim(dir);
  CHECK(ex->embedding_dim() == victim->embedding_dim());

  std::vector<PersonImage> gallery(ds.images.begin(), ds.images.end());
  for (const auto& q : ds.images) {
    const auto a = rank(q, gallery, *victim);
    const auto b = rank(q, gallery, *ex);
    REQUIRE(a.ordered_gallery.size() == b.ordered_gallery.size());
    for (std::size_t i = 0; i < a.ordered_gallery.size(); ++i) {
      CHECK(a.ordered_gallery[i].first == b.ordered_gallery[i].first);
    }
    CHECK(a.correct_positions == b.correct_positions);
  }

  PersonImage unknown = ds.images.front();
  unknown.source_path = "nowhere.png";
  CHECK_THROWS_WITH_AS(ex->embed({&unknown}), doctest::Contains("embedding not found"), Error);

  std::ifstream in(dir / "all.jsonl");
  std::string first;
  std::getline(in, first);
  std::ofstream(dir / "dup.jsonl") << first << "\n";
  CHECK_THROWS_WITH_AS(ExchangeVictim{dir}, doctest::Contains("bad embedding exchange"), Error);
  CHECK_THROWS_AS(ExchangeVictim{dir / "missing"}, DependencyMissing);
}

TEST_CASE("four-embedding exchange ranks end to end") {
  const fs::path dir = fresh_dir("edgeattack_exchange4");
  std::ofstream out(dir / "e.jsonl");
  out << R"({"image_id":"q.png","person_id":1,"modality":"visible","camera_id":1,"embedding":[1,0]})" << "\n";
  out << R"({"image_id":"a.png","person_id":1,"modality":"infrared","camera_id":3,"embedding":[0.9,0.1]})" << "\n";
  out << R"({"image_id":"b.png","person_id":2,"modality":"infrared","camera_id":3,"embedding":[0,1]})" << "\n";
  out << R"({"image_id":"c.png","person_id":3,"modality":"infrared","camera_id":3,"embedding":[-1,0]})" << "\n";
  out.close();
  ExchangeVictim ex(dir);
  auto make = [](const std::string& id, int pid, Modality m) {
    PersonImage im;
    im.source_path = id;
    im.person_id = pid;
    im.modality = m;
    im.pixels = torch::zeros({m == Modality::Visible ? 3 : 1, 4, 4});
    return im;
  };
  std::vector<PersonImage> gallery{make("c.png", 3, Modality::Infrared), make("a.png", 1, Modality::Infrared),
                                   make("b.png", 2, Modality::Infrared)};
  const auto r = rank(make("q.png", 1, Modality::Visible), gallery, ex);
  CHECK(r.ordered_gallery[0].first == "a.png");
  CHECK(r.ordered_gallery[2].first == "c.png");
  CHECK(r.correct_positions == std::vector<int>{1});
}
