#include "edgeattack/checkpoint.hpp"

#include <torch/serialize.h>

#include "edgeattack/common.hpp"

namespace edgeattack {

namespace {
constexpr const char* kMetaKey = "edgeattack.meta";

void require_file(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw DependencyMissing("dependency checkpoint not found: " + path.string());
  }
}
}  // namespace

void save_checkpoint(const torch::nn::Module& module, const nlohmann::json& meta, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  torch::serialize::OutputArchive archive;
  module.save(archive);
  archive.write(kMetaKey, c10::IValue(meta.dump()));
  archive.save_to(path.string());
}

nlohmann::json read_checkpoint_meta(const std::filesystem::path& path) {
  require_file(path);
  torch::serialize::InputArchive archive;
  archive.load_from(path.string());
  c10::IValue value;
  if (!archive.try_read(kMetaKey, value) || !value.isString()) {
    throw Error("bad checkpoint: no metadata in " + path.string());
  }
  return nlohmann::json::parse(value.toStringRef());
}

void load_checkpoint_parameters(torch::nn::Module& module, const std::filesystem::path& path) {
  require_file(path);
  torch::serialize::InputArchive archive;
  archive.load_from(path.string());
  module.load(archive);
}

std::string parameter_fingerprint(const torch::nn::Module& module) {
  std::string bytes;
  auto append = [&](const std::string& name, const torch::Tensor& t) {
    auto c = t.detach().contiguous().cpu();
    bytes += name;
    bytes.append(static_cast<const char*>(c.data_ptr()), c.numel() * c.element_size());
  };
  for (const auto& p : module.named_parameters()) append(p.key(), p.value());
  for (const auto& b : module.named_buffers()) append(b.key(), b.value());
  return sha256_hex(bytes);
}

}  // namespace edgeattack
