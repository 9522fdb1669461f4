#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>
#include <torch/nn/module.h>

namespace edgeattack {

/// Checkpoints are torch serialization archives: the module's parameters and
/// buffers plus one JSON string entry ("edgeattack.meta") describing the
/// architecture and provenance, so a file can be reloaded without side files.
void save_checkpoint(const torch::nn::Module& module, const nlohmann::json& meta, const std::filesystem::path& path);

/// Reads only the metadata. Throws DependencyMissing when the file is absent.
nlohmann::json read_checkpoint_meta(const std::filesystem::path& path);

/// Loads parameters into an already-constructed module of matching shape.
void load_checkpoint_parameters(torch::nn::Module& module, const std::filesystem::path& path);

/// SHA-256 over every parameter and buffer (names and raw bytes).
std::string parameter_fingerprint(const torch::nn::Module& module);

}  // namespace edgeattack
