#include "edgeattack/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include <c10/util/Logging.h>
#include <nlohmann/json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <torch/torch.h>

#include "image_util.hpp"

namespace fs = std::filesystem;

namespace edgeattack {

namespace {

bool is_image_file(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".jpg" || ext == ".jpeg" || ext == ".png" || ext == ".bmp";
}

std::vector<fs::path> sorted_entries(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

std::optional<int> parse_id(const std::string& s) {
  if (s.empty() || !std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isdigit(c); })) {
    return std::nullopt;
  }
  return std::stoi(s);
}

// Drop identities that are not present in both modalities and fill in `identities`.
void finalize_pairing(Dataset& ds) {
  std::map<int, std::pair<bool, bool>> seen;
  for (const auto& im : ds.images) {
    auto& s = seen[im.person_id];
    (im.modality == Modality::Visible ? s.first : s.second) = true;
  }
  std::set<int> unpaired;
  for (const auto& [pid, s] : seen) {
    if (!(s.first && s.second)) unpaired.insert(pid);
  }
  for (int pid : unpaired) LOG(WARNING) << "unpaired identity " << pid << " excluded";
  std::erase_if(ds.images, [&](const PersonImage& im) { return unpaired.contains(im.person_id); });
  ds.identities.clear();
  for (const auto& im : ds.images) ds.identities.insert(im.person_id);
}

Dataset load_sysu_tree(const fs::path& root, const LoadOptions& options) {
  Dataset ds;
  ds.layout = Layout::Sysu;
  ds.image_size = options.image_size;
  for (int cam = 1; cam <= 6; ++cam) {
    if (!options.cameras.empty() && !options.cameras.contains(cam)) continue;
    const fs::path cam_dir = root / ("cam" + std::to_string(cam));
    if (!fs::is_directory(cam_dir)) continue;
    const Modality modality = sysu_camera_modality(cam);
    for (const auto& id_dir : sorted_entries(cam_dir)) {
      if (!fs::is_directory(id_dir)) continue;
      auto pid = parse_id(id_dir.filename().string());
      if (!pid) continue;
      for (const auto& file : sorted_entries(id_dir)) {
        if (!is_image_file(file)) continue;
        PersonImage im;
        im.person_id = *pid;
        im.modality = modality;
        im.camera_id = cam;
        im.pixels = read_image(file, modality, options.image_size);
        im.source_path = fs::relative(file, root).generic_string();
        ds.images.push_back(std::move(im));
      }
    }
  }
  return ds;
}

void add_regdb_image(Dataset& ds, const fs::path& root, const fs::path& file, int pid, Modality modality,
                     const LoadOptions& options) {
  const int cam = modality == Modality::Visible ? 1 : 2;
  if (!options.cameras.empty() && !options.cameras.contains(cam)) return;
  PersonImage im;
  im.person_id = pid;
  im.modality = modality;
  im.camera_id = cam;
  im.pixels = read_image(file, modality, options.image_size);
  im.source_path = fs::relative(file, root).generic_string();
  ds.images.push_back(std::move(im));
}

Dataset load_regdb(const fs::path& root, const LoadOptions& options) {
  Dataset ds;
  ds.layout = Layout::RegDB;
  ds.image_size = options.image_size;
  const fs::path idx = root / "idx";
  if (fs::is_directory(idx)) {
    std::vector<std::string> splits;
    if (options.regdb_split == "all") {
      splits = {"train", "test"};
    } else {
      splits = {options.regdb_split};
    }
    for (const auto& split : splits) {
      for (const auto& [name, modality] :
           {std::pair{"visible", Modality::Visible}, std::pair{"thermal", Modality::Infrared}}) {
        const fs::path list = idx / (split + "_" + name + "_" + std::to_string(options.regdb_trial) + ".txt");
        if (!fs::exists(list)) continue;
        std::ifstream in(list);
        std::string line;
        while (std::getline(in, line)) {
          std::istringstream ls(line);
          std::string rel;
          int label = 0;
          if (!(ls >> rel >> label)) continue;
          const fs::path file = root / rel;
          if (!fs::exists(file)) throw Error("dataset not found: missing image " + file.string());
          add_regdb_image(ds, root, file, label, modality, options);
        }
      }
    }
  } else {
    for (const auto& [name, modality] :
         {std::pair{"visible", Modality::Visible}, std::pair{"thermal", Modality::Infrared}}) {
      const fs::path dir = root / name;
      if (!fs::is_directory(dir)) continue;
      for (const auto& id_dir : sorted_entries(dir)) {
        if (!fs::is_directory(id_dir)) continue;
        auto pid = parse_id(id_dir.filename().string());
        if (!pid) continue;
        for (const auto& file : sorted_entries(id_dir)) {
          if (is_image_file(file)) add_regdb_image(ds, root, file, *pid, modality, options);
        }
      }
    }
  }
  return ds;
}

}  // namespace

namespace detail {

torch::Tensor u8_to_tensor(const cv::Mat& u8) {
  cv::Mat f;
  u8.convertTo(f, CV_32F, 1.0 / 255.0);
  auto t = torch::from_blob(f.data, {f.rows, f.cols, f.channels()}, torch::kFloat32).clone();
  return t.permute({2, 0, 1}).contiguous();
}

}  // namespace detail

std::vector<const PersonImage*> Dataset::of_modality(Modality m) const {
  std::vector<const PersonImage*> out;
  for (const auto& im : images) {
    if (im.modality == m) out.push_back(&im);
  }
  return out;
}

Modality sysu_camera_modality(int camera_id) {
  return (camera_id == 3 || camera_id == 6) ? Modality::Infrared : Modality::Visible;
}

torch::Tensor read_image(const fs::path& path, Modality modality, ImageSize size) {
  const int flag = modality == Modality::Visible ? cv::IMREAD_COLOR : cv::IMREAD_GRAYSCALE;
  cv::Mat raw = cv::imread(path.string(), flag);
  if (raw.empty()) throw Error("cannot decode image " + path.string());
  if (raw.rows != size.height || raw.cols != size.width) {
    const int interp = (raw.rows > size.height) ? cv::INTER_AREA : cv::INTER_LINEAR;
    cv::resize(raw, raw, cv::Size(size.width, size.height), 0, 0, interp);
  }
  if (raw.channels() == 3) cv::cvtColor(raw, raw, cv::COLOR_BGR2RGB);
  return detail::u8_to_tensor(raw);
}

void write_png(const torch::Tensor& pixels, const fs::path& path) {
  TORCH_CHECK(pixels.dim() == 3, "write_png expects [C,H,W]");
  auto hwc = (pixels.detach().to(torch::kFloat32).clamp(0, 1) * 255.0).round().to(torch::kUInt8);
  hwc = hwc.permute({1, 2, 0}).contiguous();
  const int c = static_cast<int>(hwc.size(2));
  cv::Mat m(static_cast<int>(hwc.size(0)), static_cast<int>(hwc.size(1)), c == 3 ? CV_8UC3 : CV_8UC1,
            hwc.data_ptr<std::uint8_t>());
  cv::Mat out = m.clone();
  if (c == 3) cv::cvtColor(out, out, cv::COLOR_RGB2BGR);
  fs::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), out)) throw Error("cannot write image " + path.string());
}

torch::Tensor to_gray(const torch::Tensor& images) {
  TORCH_CHECK(images.dim() == 4, "to_gray expects [N,C,H,W]");
  if (images.size(1) == 1) return images;
  TORCH_CHECK(images.size(1) == 3, "to_gray expects 1 or 3 channels");
  auto w = torch::tensor({0.299, 0.587, 0.114}, images.options()).view({1, 3, 1, 1});
  return (images * w).sum(1, /*keepdim=*/true);
}

torch::Tensor stack_pixels(const std::vector<const PersonImage*>& images, int channels) {
  TORCH_CHECK(channels == 1 || channels == 3, "stack_pixels: channels must be 1 or 3");
  std::vector<torch::Tensor> parts;
  parts.reserve(images.size());
  for (const auto* im : images) {
    auto px = im->pixels.unsqueeze(0);
    if (px.size(1) != channels) px = channels == 1 ? to_gray(px) : px.expand({1, 3, -1, -1});
    parts.push_back(px);
  }
  return torch::cat(parts, 0).contiguous();
}

Dataset load_dataset(const fs::path& root, Layout layout, const LoadOptions& options) {
  if (!fs::is_directory(root)) throw Error("dataset not found: " + root.string());
  Dataset ds;
  if (layout == Layout::RegDB) {
    ds = load_regdb(root, options);
  } else {
    ds = load_sysu_tree(root, options);
    const fs::path manifest = root / "manifest.json";
    if (fs::exists(manifest)) {
      std::ifstream in(manifest);
      auto j = nlohmann::json::parse(in, nullptr, false);
      if (!j.is_discarded() && j.value("layout", "") == "toy") ds.layout = Layout::Toy;
    }
  }
  if (ds.images.empty()) throw Error("dataset not found: no images under " + root.string());
  finalize_pairing(ds);
  if (ds.images.empty()) throw Error("dataset not found: no paired identities under " + root.string());
  return ds;
}

QueryGallerySplit split_query_gallery(const Dataset& dataset, Direction direction, Protocol protocol,
                                      std::uint64_t run_seed) {
  const Modality qmod = direction == Direction::VisToIr ? Modality::Visible : Modality::Infrared;
  const Modality gmod = direction == Direction::VisToIr ? Modality::Infrared : Modality::Visible;
  QueryGallerySplit split;
  split.direction = direction;
  split.protocol = protocol;
  split.run_seed = run_seed;

  std::map<std::pair<int, int>, std::vector<const PersonImage*>> gallery_groups;
  for (const auto& im : dataset.images) {
    if (im.modality == qmod) {
      split.queries.push_back(im);
    } else if (protocol == Protocol::All) {
      split.gallery.push_back(im);
    } else {
      gallery_groups[{im.person_id, im.camera_id}].push_back(&im);
    }
  }
  if (protocol == Protocol::SingleShot) {
    std::mt19937_64 rng(run_seed);
    for (const auto& [key, members] : gallery_groups) {
      std::uniform_int_distribution<std::size_t> pick(0, members.size() - 1);
      split.gallery.push_back(*members[pick(rng)]);
    }
  }
  if (split.queries.empty() || split.gallery.empty()) {
    throw Error(std::string("modality missing: need ") + std::string(to_string(qmod)) + " queries and " +
                std::string(to_string(gmod)) + " gallery images");
  }
  return split;
}

std::pair<Dataset, Dataset> partition_by_index(const Dataset& dataset, int train_per_group) {
  Dataset train, test;
  for (auto* d : {&train, &test}) {
    d->layout = dataset.layout;
    d->image_size = dataset.image_size;
  }
  std::map<std::pair<int, Modality>, int> counter;
  for (const auto& im : dataset.images) {
    int& n = counter[{im.person_id, im.modality}];
    (n < train_per_group ? train : test).images.push_back(im);
    ++n;
  }
  finalize_pairing(train);
  finalize_pairing(test);
  return {std::move(train), std::move(test)};
}

Dataset filter_cameras(const Dataset& dataset, const std::set<int>& cameras) {
  Dataset out;
  out.layout = dataset.layout;
  out.image_size = dataset.image_size;
  for (const auto& im : dataset.images) {
    if (cameras.contains(im.camera_id)) out.images.push_back(im);
  }
  finalize_pairing(out);
  return out;
}

}  // namespace edgeattack
