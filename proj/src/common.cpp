#include "edgeattack/common.hpp"

#include <array>
#include <cstdio>

#include <openssl/evp.h>

#include "edgeattack/training.hpp"

namespace edgeattack {

std::string_view to_string(Modality m) { return m == Modality::Visible ? "visible" : "infrared"; }

std::string_view to_string(Layout l) {
  switch (l) {
    case Layout::Sysu:
      return "sysu";
    case Layout::RegDB:
      return "regdb";
    case Layout::Toy:
      return "toy";
  }
  return "toy";
}

std::string_view to_string(Direction d) { return d == Direction::VisToIr ? "vis_to_ir" : "ir_to_vis"; }

std::string_view to_string(Protocol p) { return p == Protocol::All ? "all" : "single_shot"; }

Modality parse_modality(std::string_view s) {
  if (s == "visible" || s == "VISIBLE") return Modality::Visible;
  if (s == "infrared" || s == "INFRARED") return Modality::Infrared;
  throw ConfigError("unknown modality '" + std::string(s) + "'");
}

Layout parse_layout(std::string_view s) {
  if (s == "sysu" || s == "SYSU") return Layout::Sysu;
  if (s == "regdb" || s == "REGDB") return Layout::RegDB;
  if (s == "toy" || s == "TOY") return Layout::Toy;
  throw ConfigError("unknown dataset layout '" + std::string(s) + "'");
}

Direction parse_direction(std::string_view s) {
  if (s == "vis_to_ir" || s == "VIS_TO_IR") return Direction::VisToIr;
  if (s == "ir_to_vis" || s == "IR_TO_VIS") return Direction::IrToVis;
  throw ConfigError("unknown direction '" + std::string(s) + "'");
}

Protocol parse_protocol(std::string_view s) {
  if (s == "all" || s == "ALL") return Protocol::All;
  if (s == "single_shot" || s == "SINGLE_SHOT") return Protocol::SingleShot;
  throw ConfigError("unknown protocol '" + std::string(s) + "'");
}

std::string sha256_hex(std::string_view bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  EVP_Digest(bytes.data(), bytes.size(), digest.data(), &len, EVP_sha256(), nullptr);
  std::string out;
  out.reserve(len * 2);
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof(buf), "%02x", digest[i]);
    out += buf;
  }
  return out;
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"optimizer", c.optimizer},
                     {"epochs", c.epochs},
                     {"learning_rate", c.learning_rate},
                     {"momentum", c.momentum},
                     {"weight_decay", c.weight_decay},
                     {"seed", c.seed},
                     {"ids_per_batch", c.ids_per_batch},
                     {"images_per_id", c.images_per_id}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.optimizer = j.value("optimizer", c.optimizer);
  c.epochs = j.value("epochs", c.epochs);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.momentum = j.value("momentum", c.momentum);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.seed = j.value("seed", c.seed);
  c.ids_per_batch = j.value("ids_per_batch", c.ids_per_batch);
  c.images_per_id = j.value("images_per_id", c.images_per_id);
}

}  // namespace edgeattack
