#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <torch/types.h>

#include "edgeattack/common.hpp"

namespace edgeattack {

struct ImageSize {
  int height = 256;
  int width = 128;

  bool operator==(const ImageSize&) const = default;
};

/// One pedestrian image. `pixels` is a float32 [C, H, W] tensor in [0, 1];
/// C = 3 for visible images and C = 1 for infrared ones. `source_path` is the
/// path relative to the dataset root and doubles as the image identifier.
struct PersonImage {
  int person_id = -1;
  Modality modality = Modality::Visible;
  int camera_id = 0;
  torch::Tensor pixels;
  std::string source_path;

  int height() const { return static_cast<int>(pixels.size(1)); }
  int width() const { return static_cast<int>(pixels.size(2)); }
};

struct Dataset {
  std::vector<PersonImage> images;
  std::set<int> identities;
  Layout layout = Layout::Toy;
  ImageSize image_size;

  std::vector<const PersonImage*> of_modality(Modality m) const;
};

struct QueryGallerySplit {
  std::vector<PersonImage> queries;
  std::vector<PersonImage> gallery;
  Direction direction = Direction::VisToIr;
  Protocol protocol = Protocol::All;
  std::uint64_t run_seed = 0;
};

struct LoadOptions {
  ImageSize image_size;
  // RegDB index files: which trial (1 or 2) and which split ("train", "test", "all").
  int regdb_trial = 1;
  std::string regdb_split = "all";
  // Empty means all cameras.
  std::set<int> cameras;
};

/// Read a SYSU-MM01 or RegDB directory tree. A SYSU-style tree carrying a toy
/// `manifest.json` loads with layout Toy. Identities seen in only one
/// modality are dropped with a warning.
Dataset load_dataset(const std::filesystem::path& root, Layout layout, const LoadOptions& options = {});

struct ToyParams {
  int n_ids = 8;
  int per_id_per_modality = 4;
  ImageSize image_size{128, 64};
  std::uint64_t seed = 7;
};

/// Procedural two-modality pedestrian set. Pixels are quantized to 8 bits so an
/// exported tree reloads bit-identically.
Dataset generate_toy_dataset(const ToyParams& params);

/// Binary person mask of identity `person_id` as drawn by the toy renderer
/// (canonical pose, no jitter). Values are 0 or 1, shape [H, W].
torch::Tensor toy_silhouette_mask(int person_id, const ToyParams& params);

/// Write a toy dataset as a SYSU-style PNG tree plus `manifest.json`.
/// Returns the manifest path.
std::filesystem::path export_toy_dataset(const Dataset& dataset, const ToyParams& params,
                                         const std::filesystem::path& root);

QueryGallerySplit split_query_gallery(const Dataset& dataset, Direction direction, Protocol protocol,
                                      std::uint64_t run_seed);

/// Partition every (identity, modality) group by image order: the first
/// `train_per_group` images go to the first dataset, the rest to the second.
std::pair<Dataset, Dataset> partition_by_index(const Dataset& dataset, int train_per_group);

/// Keep only images whose camera is listed.
Dataset filter_cameras(const Dataset& dataset, const std::set<int>& cameras);

/// SYSU camera numbering: cameras 3 and 6 are infrared.
Modality sysu_camera_modality(int camera_id);

/// [N,C,H,W] -> [N,1,H,W] luminance (ITU-R 601 weights). Single-channel input passes through.
torch::Tensor to_gray(const torch::Tensor& images);

/// Stack same-sized images into [N, channels, H, W]. channels = 1 converts
/// visible images to gray; channels = 3 replicates infrared images.
torch::Tensor stack_pixels(const std::vector<const PersonImage*>& images, int channels);

torch::Tensor read_image(const std::filesystem::path& path, Modality modality, ImageSize size);
void write_png(const torch::Tensor& pixels, const std::filesystem::path& path);

}  // namespace edgeattack
