#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "edgeattack/evaluation.hpp"
#include "oracles.hpp"

using namespace edgeattack;
namespace fs = std::filesystem;

namespace {

RankingResult ranking_with(std::vector<int> positions, int gallery) {
  RankingResult r;
  r.query_ref = "q";
  for (int i = 1; i <= gallery; ++i) r.ordered_gallery.emplace_back("g" + std::to_string(i), 1.0 - i * 0.01);
  r.correct_positions = std::move(positions);
  return r;
}

// Embeds an image by its mean intensity per row block: deterministic, cheap.
class RowMeanVictim final : public VictimModel {
 public:
  torch::Tensor embed(const std::vector<const PersonImage*>& images) const override {
    std::vector<torch::Tensor> rows;
    for (const auto* im : images) {
      auto g = im->pixels.mean(0, true).unsqueeze(0);
      rows.push_back(torch::adaptive_avg_pool2d(g, {8, 2}).reshape({-1}));
    }
    return torch::stack(rows);
  }
  std::string name() const override { return "row-mean"; }
  int embedding_dim() const override { return 16; }
  std::string config_hash() const override { return "none"; }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_CASE("cmc and mAP agree with the brute-force oracle") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const int G = std::uniform_int_distribution<int>(2, 30)(rng);
    const int D = 4;
    const int query_pid = 0;
    const int n_rel = std::uniform_int_distribution<int>(1, std::min(5, G))(rng);
    std::vector<int> pids(static_cast<std::size_t>(G));
    for (int i = 0; i < G; ++i) pids[static_cast<std::size_t>(i)] = i < n_rel ? query_pid : 1 + i;
    std::shuffle(pids.begin(), pids.end(), rng);
    std::vector<std::string> refs;
    for (int i = 0; i < G; ++i) refs.push_back("img" + std::to_string(i));
    auto gal = torch::randn({G, D}, torch::kFloat64);
    auto q = torch::randn({D}, torch::kFloat64);
    const auto r = rank_embeddings("q", query_pid, q, refs, pids, gal);

    oracle::Vec sims;
    const auto gm = oracle::to_mat(gal);
    const auto qv = oracle::to_mat(q.unsqueeze(0))[0];
    for (const auto& g : gm) sims.push_back(oracle::cosine(g, qv));
    const auto o = oracle::score_query(sims, refs, pids, query_pid);
    const auto c = cmc({r}, {1, 5, 10, 20});
    for (int k : {1, 5, 10, 20}) CHECK(c.at(k) == doctest::Approx(o.first_hit <= k ? 100.0 : 0.0).epsilon(1e-12));
    CHECK(mean_average_precision({r}) == doctest::Approx(100.0 * o.average_precision).epsilon(1e-12));
  }
}

TEST_CASE("documented metric examples") {
  // single query, correct match at position 3 of 10
  auto r = ranking_with({3}, 10);
  auto c = cmc({r}, {1, 5});
  CHECK(c.at(1) == 0.0);
  CHECK(c.at(5) == 100.0);
  CHECK(mean_average_precision({r}) == doctest::Approx(100.0 / 3.0));
  // two relevant items at positions 1 and 3 -> AP = (1/1 + 2/3) / 2
  CHECK(mean_average_precision({ranking_with({1, 3}, 10)}) == doctest::Approx(100.0 * (1.0 + 2.0 / 3.0) / 2.0));
  // relevant items on a prefix -> 100
  CHECK(mean_average_precision({ranking_with({1, 2, 3}, 10)}) == doctest::Approx(100.0));
}

TEST_CASE("cmc is non-decreasing in r") {
  std::vector<RankingResult> rs;
  for (int p : {1, 4, 9, 15, 22}) rs.push_back(ranking_with({p}, 30));
  const auto c = cmc(rs, {1, 2, 5, 10, 20, 30});
  double last = -1;
  for (const auto& [k, v] : c) {
    CHECK(v >= last);
    last = v;
  }
  CHECK(c.at(30) == 100.0);
}

TEST_CASE("metric errors") {
  RankingResult none = ranking_with({}, 5);
  CHECK_THROWS_WITH_AS(cmc({none}, {1}), doctest::Contains("query has no ground truth"), Error);
  CHECK_THROWS_WITH_AS(rank_embeddings("q", 1, torch::ones({2}), {}, {}, torch::zeros({0, 2})),
                       doctest::Contains("empty gallery"), Error);
}

TEST_CASE("ranking ties break by ascending gallery identifier") {
  auto gal = torch::ones({3, 2});
  const auto r = rank_embeddings("q", 7, torch::ones({2}), {"c", "a", "b"}, {1, 7, 2}, gal);
  REQUIRE(r.ordered_gallery.size() == 3);
  CHECK(r.ordered_gallery[0].first == "a");
  CHECK(r.ordered_gallery[1].first == "b");
  CHECK(r.ordered_gallery[2].first == "c");
  CHECK(r.correct_positions == std::vector<int>{1});
}

TEST_CASE("degradation report") {
  EvalReport pre;
  pre.r_values = {1, 10};
  pre.rank_r = {{1, 47.50}, {10, 80.0}};
  pre.map_score = 45.0;
  SUBCASE("identical reports give zero drops") {
    const auto d = degradation_report(pre, pre);
    for (const auto& row : d.rows) CHECK(row.drop == 0.0);
  }
  SUBCASE("rank-1 47.50 -> 1.13 drops by 46.37") {
    EvalReport post = pre;
    post.rank_r[1] = 1.13;
    const auto d = degradation_report(pre, post);
    CHECK(d.rows[0].metric == "rank1");
    CHECK(d.rows[0].drop == doctest::Approx(46.37));
    CHECK(*d.rows[0].relative_drop == doctest::Approx(46.37 / 47.50));
  }
  SUBCASE("zero pre value has no relative drop") {
    EvalReport z = pre;
    z.rank_r[1] = 0.0;
    const auto d = degradation_report(z, z);
    CHECK_FALSE(d.rows[0].relative_drop.has_value());
    const fs::path p = fs::temp_directory_path() / "edgeattack_deg.csv";
    d.write_csv(p);
    CHECK(slurp(p).find("—") != std::string::npos);
  }
  SUBCASE("mismatched reports") {
    EvalReport other = pre;
    other.direction = Direction::IrToVis;
    CHECK_THROWS_WITH_AS(degradation_report(pre, other), doctest::Contains("reports not comparable"), Error);
  }
}

TEST_CASE("evaluate: per-run records, determinism and json round trip") {
  ToyParams p;
  p.n_ids = 4;
  p.per_id_per_modality = 3;
  const Dataset ds = generate_toy_dataset(p);
  RowMeanVictim victim;
  EvalOptions o;
  o.protocol = Protocol::SingleShot;
  o.n_runs = 3;
  o.seed = 5;
  const auto a = evaluate(victim, ds, o);
  const auto b = evaluate(victim, ds, o);
  CHECK(a.to_json().dump() == b.to_json().dump());
  REQUIRE(a.per_run.size() == 3);
  double map_sum = 0.0;
  for (const auto& r : a.per_run) {
    CHECK(r.run_seed == 5 + static_cast<std::uint64_t>(r.run));
    CHECK(r.gallery_size == 4 * 2);  // one per identity and infrared camera
    map_sum += r.map_score;
  }
  CHECK(a.map_score == doctest::Approx(map_sum / 3.0));
  const auto back = EvalReport::from_json(a.to_json());
  CHECK(back.to_json().dump() == a.to_json().dump());
}

TEST_CASE("SYSU layout drops same-camera gallery entries") {
  ToyParams p;
  p.n_ids = 3;
  p.per_id_per_modality = 2;
  Dataset ds = generate_toy_dataset(p);
  for (auto& im : ds.images) im.camera_id = 1;
  RowMeanVictim victim;
  EvalOptions o;
  // Toy layout keeps every gallery entry.
  CHECK(evaluate(victim, ds, o).per_run[0].n_queries == 6);
  // Under SYSU rules all true matches share the query camera and vanish.
  ds.layout = Layout::Sysu;
  CHECK_THROWS_WITH_AS(evaluate(victim, ds, o), doctest::Contains("query has no ground truth"), Error);
}

TEST_CASE("report files are stable") {
  EvalReport r;
  r.rank_r = {{1, 12.3456}, {5, 50}, {10, 60}, {20, 70}};
  r.map_score = 33.333;
  const fs::path dir = fs::temp_directory_path() / "edgeattack_report";
  r.write_csv(dir / "a.csv");
  r.write_csv(dir / "b.csv");
  CHECK(slurp(dir / "a.csv") == slurp(dir / "b.csv"));
  CHECK(slurp(dir / "a.csv").find("12.35") != std::string::npos);
  write_cmc_plot({{"clean", r}}, dir / "cmc.png");
  CHECK(fs::file_size(dir / "cmc.png") > 0);
}
