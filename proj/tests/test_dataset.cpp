#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "edgeattack/dataset.hpp"

using namespace edgeattack;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

void write_solid(const fs::path& path, float value, int channels) {
  write_png(torch::full({channels, 32, 16}, value), path);
}

}  // namespace

TEST_CASE("toy generator: counts, determinism, seed sensitivity") {
  ToyParams p;  // 8 ids x 4 per modality, 128x64, seed 7
  const Dataset a = generate_toy_dataset(p);
  CHECK(a.images.size() == 64);
  CHECK(a.identities.size() == 8);
  const Dataset b = generate_toy_dataset(p);
  for (std::size_t i = 0; i < a.images.size(); ++i) CHECK(torch::equal(a.images[i].pixels, b.images[i].pixels));
  for (const auto& im : a.images) {
    CHECK(im.pixels.size(0) == (im.modality == Modality::Visible ? 3 : 1));
    CHECK(im.height() == 128);
    CHECK(im.width() == 64);
  }
  p.seed = 8;
  const Dataset c = generate_toy_dataset(p);
  CHECK(c.images.size() == 64);
  bool differs = false;
  for (std::size_t i = 0; i < a.images.size(); ++i) differs = differs || !torch::equal(a.images[i].pixels, c.images[i].pixels);
  CHECK(differs);
}

TEST_CASE("toy silhouettes are pairwise distinct") {
  ToyParams p;
  for (int i = 1; i <= p.n_ids; ++i) {
    for (int j = i + 1; j <= p.n_ids; ++j) {
      const auto a = toy_silhouette_mask(i, p);
      const auto b = toy_silhouette_mask(j, p);
      const double inter = (a * b).sum().item<double>();
      const double uni = ((a + b) > 0).sum().item<double>();
      CAPTURE(i);
      CAPTURE(j);
      CHECK(inter / uni < 0.95);
    }
  }
}

TEST_CASE("toy export reloads bit-identically") {
  ToyParams p;
  p.n_ids = 3;
  p.per_id_per_modality = 2;
  const Dataset ds = generate_toy_dataset(p);
  const fs::path root = fresh_dir("edgeattack_toy_export");
  const auto manifest = export_toy_dataset(ds, p, root);
  CHECK(fs::exists(manifest));
  LoadOptions o;
  o.image_size = p.image_size;
  const Dataset back = load_dataset(root, Layout::Sysu, o);
  CHECK(back.layout == Layout::Toy);
  REQUIRE(back.images.size() == ds.images.size());
  for (const auto& im : ds.images) {
    const auto it = std::find_if(back.images.begin(), back.images.end(),
                                 [&](const PersonImage& b) { return b.source_path == im.source_path; });
    REQUIRE(it != back.images.end());
    CHECK(torch::equal(it->pixels, im.pixels));
    CHECK(it->person_id == im.person_id);
    CHECK(it->modality == im.modality);
  }
}

TEST_CASE("SYSU-style fixture: 2 identities x 2 modalities x 1 image") {
  const fs::path root = fresh_dir("edgeattack_sysu_fixture");
  write_solid(root / "cam1" / "0001" / "0001.jpg", 0.2f, 3);
  write_solid(root / "cam1" / "0002" / "0001.jpg", 0.4f, 3);
  write_solid(root / "cam3" / "0001" / "0001.jpg", 0.6f, 1);
  write_solid(root / "cam3" / "0002" / "0001.jpg", 0.8f, 1);
  write_solid(root / "cam3" / "0009" / "0001.jpg", 0.8f, 1);  // infrared only: dropped
  LoadOptions o;
  o.image_size = {32, 16};
  const Dataset ds = load_dataset(root, Layout::Sysu, o);
  CHECK(ds.images.size() == 4);
  CHECK(ds.identities == std::set<int>{1, 2});
  for (const auto& im : ds.images) CHECK(im.modality == sysu_camera_modality(im.camera_id));
}

TEST_CASE("RegDB-style fixture with identity folders") {
  const fs::path root = fresh_dir("edgeattack_regdb_fixture");
  for (int pid : {1, 2, 3}) {
    for (int k = 0; k < 2; ++k) {
      write_solid(root / "visible" / std::to_string(pid) / ("v" + std::to_string(k) + ".bmp"), 0.1f * pid, 3);
      write_solid(root / "thermal" / std::to_string(pid) / ("t" + std::to_string(k) + ".bmp"), 0.1f * pid, 1);
    }
  }
  LoadOptions o;
  o.image_size = {32, 16};
  const Dataset ds = load_dataset(root, Layout::RegDB, o);
  CHECK(ds.images.size() == 12);
  CHECK(ds.identities.size() == 3);
  CHECK(ds.of_modality(Modality::Infrared).size() == 6);
}

TEST_CASE("loader errors") {
  const fs::path empty = fresh_dir("edgeattack_empty_root");
  CHECK_THROWS_WITH_AS(load_dataset(empty, Layout::Sysu), doctest::Contains("dataset not found"), Error);
  CHECK_THROWS_WITH_AS(load_dataset(empty / "absent", Layout::RegDB), doctest::Contains("dataset not found"), Error);
}

TEST_CASE("query/gallery splits") {
  ToyParams p;
  const Dataset ds = generate_toy_dataset(p);
  const auto all = split_query_gallery(ds, Direction::VisToIr, Protocol::All, 0);
  CHECK(all.queries.size() == 32);
  CHECK(all.gallery.size() == 32);
  for (const auto& q : all.queries) CHECK(q.modality == Modality::Visible);
  for (const auto& g : all.gallery) CHECK(g.modality == Modality::Infrared);

  const auto s1 = split_query_gallery(ds, Direction::VisToIr, Protocol::SingleShot, 1);
  const auto s2 = split_query_gallery(ds, Direction::VisToIr, Protocol::SingleShot, 2);
  REQUIRE(s1.queries.size() == s2.queries.size());
  for (std::size_t i = 0; i < s1.queries.size(); ++i) CHECK(s1.queries[i].source_path == s2.queries[i].source_path);
  std::vector<std::string> g1, g2;
  for (const auto& g : s1.gallery) g1.push_back(g.source_path);
  for (const auto& g : s2.gallery) g2.push_back(g.source_path);
  CHECK(g1 != g2);

  const auto rev = split_query_gallery(ds, Direction::IrToVis, Protocol::All, 0);
  CHECK(rev.queries.front().modality == Modality::Infrared);

  const auto vis_only = filter_cameras(ds, {1, 2});
  CHECK(vis_only.images.empty());
  Dataset only_visible = ds;
  std::erase_if(only_visible.images, [](const PersonImage& im) { return im.modality == Modality::Infrared; });
  CHECK_THROWS_WITH_AS(split_query_gallery(only_visible, Direction::VisToIr, Protocol::All, 0),
                       doctest::Contains("modality missing"), Error);
}

TEST_CASE("partition by index keeps every identity on both sides") {
  ToyParams p;
  p.per_id_per_modality = 6;
  const auto [train, test] = partition_by_index(generate_toy_dataset(p), 4);
  CHECK(train.images.size() == 8 * 2 * 4);
  CHECK(test.images.size() == 8 * 2 * 2);
  CHECK(train.identities == test.identities);
  for (const auto& im : test.images) {
    for (const auto& tr : train.images) CHECK(im.source_path != tr.source_path);
  }
}

TEST_CASE("gray conversion and stacking") {
  auto rgb = torch::zeros({1, 3, 2, 2});
  rgb.select(1, 0).fill_(1.0f);
  CHECK(to_gray(rgb).select(1, 0).mean().item<float>() == doctest::Approx(0.299f));
  PersonImage ir;
  ir.modality = Modality::Infrared;
  ir.pixels = torch::full({1, 2, 2}, 0.5f);
  const auto s = stack_pixels({&ir}, 3);
  CHECK(s.sizes() == torch::IntArrayRef({1, 3, 2, 2}));
}
