#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace edgeattack {

/// Base class for every error raised by the library. The message carries the
/// short failure phrase (e.g. "dataset not found") followed by details.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent configuration. CLI exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A required upstream artifact (checkpoint, dataset tree) is absent. CLI exit code 3.
class DependencyMissing : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss during training. CLI exit code 4.
class TrainingDiverged : public Error {
 public:
  using Error::Error;
};

enum class Modality { Visible, Infrared };
enum class Layout { Sysu, RegDB, Toy };
enum class Direction { VisToIr, IrToVis };
enum class Protocol { SingleShot, All };

std::string_view to_string(Modality m);
std::string_view to_string(Layout l);
std::string_view to_string(Direction d);
std::string_view to_string(Protocol p);

Modality parse_modality(std::string_view s);
Layout parse_layout(std::string_view s);
Direction parse_direction(std::string_view s);
Protocol parse_protocol(std::string_view s);

/// Hex SHA-256 of a byte string. Used for config hashes and parameter fingerprints.
std::string sha256_hex(std::string_view bytes);

}  // namespace edgeattack
