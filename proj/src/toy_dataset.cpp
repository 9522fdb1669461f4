// Procedural two-modality pedestrians. Each identity is a fixed body layout
// (head, optional hat, patterned torso, two arms, two legs, optional bag) with
// its own clothing palette and per-part thermal levels; images vary by pose jitter,
// camera background, small color/intensity jitter and sensor noise.

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include <nlohmann/json.hpp>
#include <opencv2/imgproc.hpp>
#include <torch/torch.h>

#include "edgeattack/dataset.hpp"
#include "image_util.hpp"

namespace fs = std::filesystem;

namespace edgeattack {

namespace {

constexpr int kSupersample = 4;
constexpr int kPartCount = 10;  // background + 9 body parts
constexpr double kMaxPairIoU = 0.85;

enum Part : std::uint8_t { kBackground = 0, kHead, kHat, kTorso, kArmL, kArmR, kLegL, kLegR, kBag, kPattern };

// All coordinates are fractions of image width (x) and height (y).
struct BodyShape {
  double head_cx, head_cy, head_rx, head_ry;
  int hat;  // 0 none, 1 cap, 2 pointed
  double shoulder_y, hip_y, shoulder_hw, hip_hw;
  double arm_angle_l, arm_angle_r, arm_len, arm_thick;
  double leg_offset, foot_spread, leg_thick;
  int bag;  // 0 none, 1 left, 2 right
  double bag_w, bag_h, bag_y;
  int pattern;  // torso print: 0 horizontal bands, 1 vertical bands, 2 diagonal bands, 3 chest block
  int bands;
  std::array<std::array<float, 3>, kPartCount> palette;  // visible RGB per part
  std::array<float, kPartCount> thermal;                 // infrared level per part
};

struct PoseJitter {
  double dx = 0, dy = 0, scale = 1;  // dx, dy in output pixels
  double arm_delta = 0, spread_delta = 0;
};

std::mt19937_64 make_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> salt) {
  std::vector<std::uint32_t> words{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  for (auto s : salt) {
    words.push_back(static_cast<std::uint32_t>(s));
    words.push_back(static_cast<std::uint32_t>(s >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return std::mt19937_64(seq);
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

BodyShape sample_shape(std::mt19937_64& rng) {
  BodyShape b{};
  b.head_cx = 0.5 + uniform(rng, -0.04, 0.04);
  b.head_cy = uniform(rng, 0.09, 0.13);
  b.head_rx = uniform(rng, 0.09, 0.16);
  b.head_ry = uniform(rng, 0.045, 0.075);
  b.hat = std::uniform_int_distribution<int>(0, 2)(rng);
  b.shoulder_y = uniform(rng, 0.19, 0.23);
  b.hip_y = uniform(rng, 0.50, 0.58);
  b.shoulder_hw = uniform(rng, 0.17, 0.30);
  b.hip_hw = uniform(rng, 0.12, 0.26);
  b.arm_angle_l = uniform(rng, 2.0, 42.0);
  b.arm_angle_r = uniform(rng, 2.0, 42.0);
  b.arm_len = uniform(rng, 0.26, 0.38);
  b.arm_thick = uniform(rng, 0.07, 0.13);
  b.leg_offset = uniform(rng, 0.04, 0.12);
  b.foot_spread = uniform(rng, 0.0, 0.14);
  b.leg_thick = uniform(rng, 0.10, 0.17);
  b.bag = std::uniform_int_distribution<int>(0, 2)(rng);
  b.bag_w = uniform(rng, 0.12, 0.22);
  b.bag_h = uniform(rng, 0.08, 0.16);
  b.bag_y = uniform(rng, 0.45, 0.62);
  b.pattern = std::uniform_int_distribution<int>(0, 3)(rng);
  b.bands = std::uniform_int_distribution<int>(1, 3)(rng);
  for (int part = 1; part < kPartCount; ++part) {
    for (auto& c : b.palette[static_cast<std::size_t>(part)]) c = static_cast<float>(uniform(rng, 0.05, 0.95));
    b.thermal[static_cast<std::size_t>(part)] = static_cast<float>(uniform(rng, 0.58, 0.9));
  }
  // The print must read in both modalities.
  auto lum = [](const std::array<float, 3>& c) { return 0.299f * c[0] + 0.587f * c[1] + 0.114f * c[2]; };
  while (std::abs(lum(b.palette[kPattern]) - lum(b.palette[kTorso])) < 0.25f) {
    for (auto& c : b.palette[kPattern]) c = static_cast<float>(uniform(rng, 0.05, 0.95));
  }
  b.thermal[kPattern] = b.thermal[kTorso] > 0.74f ? b.thermal[kTorso] - static_cast<float>(uniform(rng, 0.2, 0.3))
                                                  : b.thermal[kTorso] + static_cast<float>(uniform(rng, 0.2, 0.3));
  b.thermal[kHead] = static_cast<float>(uniform(rng, 0.84, 0.92));  // exposed skin runs hot
  b.thermal[kBag] = static_cast<float>(uniform(rng, 0.42, 0.5));   // carried objects run cool
  return b;
}

// Renders the part-label map at kSupersample times the output resolution.
cv::Mat render_labels(const BodyShape& b, const PoseJitter& j, ImageSize size) {
  const int H = size.height * kSupersample;
  const int W = size.width * kSupersample;
  cv::Mat labels(H, W, CV_8U, cv::Scalar(kBackground));
  auto pt = [&](double xf, double yf) {
    const double x = ((xf - 0.5) * j.scale + 0.5) * size.width + j.dx;
    const double y = ((yf - 0.5) * j.scale + 0.5) * size.height + j.dy;
    return cv::Point(static_cast<int>(std::lround(x * kSupersample)), static_cast<int>(std::lround(y * kSupersample)));
  };
  auto len_x = [&](double f) { return std::max(1, static_cast<int>(std::lround(f * j.scale * size.width * kSupersample))); };
  auto len_y = [&](double f) { return std::max(1, static_cast<int>(std::lround(f * j.scale * size.height * kSupersample))); };

  // Bag sits behind the body.
  if (b.bag != 0) {
    const double side = b.bag == 1 ? -1.0 : 1.0;
    const double cx = 0.5 + side * (b.hip_hw + b.bag_w * 0.5 + 0.03);
    std::vector<cv::Point> quad{pt(cx - b.bag_w / 2, b.bag_y - b.bag_h / 2), pt(cx + b.bag_w / 2, b.bag_y - b.bag_h / 2),
                                pt(cx + b.bag_w / 2, b.bag_y + b.bag_h / 2), pt(cx - b.bag_w / 2, b.bag_y + b.bag_h / 2)};
    cv::fillConvexPoly(labels, quad, cv::Scalar(kBag));
    cv::line(labels, pt(cx, b.bag_y - b.bag_h / 2), pt(0.5 + side * b.shoulder_hw * 0.6, b.shoulder_y), cv::Scalar(kBag),
             len_x(0.02));
  }

  const double foot_y = 0.955;
  const double spread = std::max(0.0, b.foot_spread + j.spread_delta);
  const int leg_t = len_x(b.leg_thick);
  cv::line(labels, pt(0.5 - b.leg_offset, b.hip_y - 0.02), pt(0.5 - b.leg_offset - spread, foot_y), cv::Scalar(kLegL), leg_t);
  cv::line(labels, pt(0.5 + b.leg_offset, b.hip_y - 0.02), pt(0.5 + b.leg_offset + spread, foot_y), cv::Scalar(kLegR), leg_t);

  std::vector<cv::Point> torso{pt(0.5 - b.shoulder_hw, b.shoulder_y), pt(0.5 + b.shoulder_hw, b.shoulder_y),
                               pt(0.5 + b.hip_hw, b.hip_y), pt(0.5 - b.hip_hw, b.hip_y)};
  cv::fillConvexPoly(labels, torso, cv::Scalar(kTorso));
  {
    cv::Mat print(H, W, CV_8U, cv::Scalar(0));
    const double th = b.hip_y - b.shoulder_y;
    const int n = b.bands;
    auto rect = [&](double x0, double y0, double x1, double y1) {
      std::vector<cv::Point> q{pt(x0, y0), pt(x1, y0), pt(x1, y1), pt(x0, y1)};
      cv::fillConvexPoly(print, q, cv::Scalar(255));
    };
    if (b.pattern == 0) {
      const double bt = th / (2 * n + 1);
      for (int t = 0; t < n; ++t) rect(0.0, b.shoulder_y + (2 * t + 1) * bt, 1.0, b.shoulder_y + (2 * t + 2) * bt);
    } else if (b.pattern == 1) {
      const double bw = 2 * b.shoulder_hw / (2 * n + 1);
      for (int t = 0; t < n; ++t) {
        rect(0.5 - b.shoulder_hw + (2 * t + 1) * bw, 0.0, 0.5 - b.shoulder_hw + (2 * t + 2) * bw, 1.0);
      }
    } else if (b.pattern == 2) {
      const double step = th / (n + 0.5);
      for (int t = 0; t < n + 1; ++t) {
        const double y = b.shoulder_y + t * step;
        cv::line(print, pt(0.5 - b.shoulder_hw, y), pt(0.5 + b.shoulder_hw, y + th * 0.5), cv::Scalar(255),
                 len_y(step * 0.45));
      }
    } else {
      rect(0.5 - b.shoulder_hw * 0.45, b.shoulder_y + th * 0.2, 0.5 + b.shoulder_hw * 0.45,
           b.shoulder_y + th * (0.45 + 0.1 * n));
    }
    labels.setTo(cv::Scalar(kPattern), (print > 0) & (labels == kTorso));
  }

  const int arm_t = len_x(b.arm_thick);
  const double aspect = static_cast<double>(size.height) / size.width;
  for (int side : {-1, 1}) {
    const double angle = (side < 0 ? b.arm_angle_l : b.arm_angle_r) + j.arm_delta;
    const double rad = angle * std::numbers::pi / 180.0;
    const double sx = 0.5 + side * (b.shoulder_hw - b.arm_thick * 0.3);
    const double sy = b.shoulder_y + 0.02;
    // Arm length is measured in height units; convert the x offset to width fractions.
    const double ex = sx + side * std::sin(rad) * b.arm_len * aspect;
    const double ey = sy + std::cos(rad) * b.arm_len;
    cv::line(labels, pt(sx, sy), pt(ex, ey), cv::Scalar(side < 0 ? kArmL : kArmR), arm_t);
  }

  // Neck then head.
  cv::line(labels, pt(b.head_cx, b.head_cy), pt(0.5, b.shoulder_y), cv::Scalar(kHead), len_x(0.08));
  cv::ellipse(labels, pt(b.head_cx, b.head_cy), cv::Size(len_x(b.head_rx), len_y(b.head_ry)), 0, 0, 360,
              cv::Scalar(kHead), cv::FILLED);
  const double top = b.head_cy - b.head_ry;
  if (b.hat == 1) {
    std::vector<cv::Point> cap{pt(b.head_cx - b.head_rx * 1.3, top + 0.012), pt(b.head_cx + b.head_rx * 1.3, top + 0.012),
                               pt(b.head_cx + b.head_rx * 0.9, top - 0.025), pt(b.head_cx - b.head_rx * 0.9, top - 0.025)};
    cv::fillConvexPoly(labels, cap, cv::Scalar(kHat));
  } else if (b.hat == 2) {
    std::vector<cv::Point> cone{pt(b.head_cx - b.head_rx, top + 0.015), pt(b.head_cx + b.head_rx, top + 0.015),
                                pt(b.head_cx, top - 0.06)};
    cv::fillConvexPoly(labels, cone, cv::Scalar(kHat));
  }
  return labels;
}

// Paint a per-part color table into a supersampled float image, then area-downsample.
cv::Mat paint(const cv::Mat& labels, const cv::Mat& background, const std::array<cv::Vec3f, kPartCount>& colors,
              ImageSize size) {
  cv::Mat img = background.clone();
  for (int y = 0; y < labels.rows; ++y) {
    const auto* lab = labels.ptr<std::uint8_t>(y);
    auto* px = img.ptr<cv::Vec3f>(y);
    for (int x = 0; x < labels.cols; ++x) {
      if (lab[x] != kBackground) px[x] = colors[lab[x]];
    }
  }
  cv::Mat out;
  cv::resize(img, out, cv::Size(size.width, size.height), 0, 0, cv::INTER_AREA);
  return out;
}

cv::Vec3f random_color(std::mt19937_64& rng) {
  return {static_cast<float>(uniform(rng, 0.05, 0.95)), static_cast<float>(uniform(rng, 0.05, 0.95)),
          static_cast<float>(uniform(rng, 0.05, 0.95))};
}

float luminance(const cv::Vec3f& c) { return 0.299f * c[0] + 0.587f * c[1] + 0.114f * c[2]; }

// Camera backgrounds: the two cameras of each modality differ in texture.
cv::Mat visible_background(int camera, std::mt19937_64& rng, int H, int W, cv::Vec3f& mean_color) {
  mean_color = random_color(rng);
  cv::Mat bg(H, W, CV_32FC3, cv::Scalar(mean_color[0], mean_color[1], mean_color[2]));
  if (camera == 1) {
    for (int y = 0; y < H; ++y) {
      const float g = 0.15f * (static_cast<float>(y) / H - 0.5f);
      bg.row(y) += cv::Scalar(g, g, g);
    }
  } else {
    const int period = static_cast<int>(uniform(rng, 10, 18)) * kSupersample;
    for (int y = 0; y < H; ++y) {
      if ((y / period) % 2 == 0) bg.row(y) += cv::Scalar(0.06, 0.06, 0.06);
    }
  }
  const int clutter = std::uniform_int_distribution<int>(3, 6)(rng);
  for (int i = 0; i < clutter; ++i) {
    const int x0 = static_cast<int>(uniform(rng, 0, W));
    const int y0 = static_cast<int>(uniform(rng, 0, H));
    const int w = static_cast<int>(uniform(rng, 0.05, 0.3) * W);
    const int h = static_cast<int>(uniform(rng, 0.02, 0.15) * H);
    const float d = static_cast<float>(uniform(rng, -0.08, 0.08));
    cv::Mat roi = bg(cv::Rect(x0, y0, std::min(w, W - x0), std::min(h, H - y0)));
    roi += cv::Scalar(d, d, d);
  }
  return bg;
}

cv::Mat infrared_background(int camera, std::mt19937_64& rng, int H, int W) {
  const float base = camera == 3 ? static_cast<float>(uniform(rng, 0.12, 0.22)) : static_cast<float>(uniform(rng, 0.22, 0.32));
  cv::Mat bg(H, W, CV_32FC3, cv::Scalar(base, base, base));
  if (camera == 3) {
    for (int y = 0; y < H; ++y) {
      const float g = 0.1f * static_cast<float>(y) / H;
      bg.row(y) += cv::Scalar(g, g, g);
    }
  } else {
    const int blobs = std::uniform_int_distribution<int>(3, 6)(rng);
    for (int i = 0; i < blobs; ++i) {
      const float d = static_cast<float>(uniform(rng, 0.04, 0.1));
      cv::ellipse(bg, cv::Point(static_cast<int>(uniform(rng, 0, W)), static_cast<int>(uniform(rng, 0, H))),
                  cv::Size(static_cast<int>(uniform(rng, 0.1, 0.3) * W), static_cast<int>(uniform(rng, 0.05, 0.15) * H)), 0,
                  0, 360, cv::Scalar(base + d, base + d, base + d), cv::FILLED);
    }
  }
  return bg;
}

cv::Mat to_u8(const cv::Mat& f) {
  cv::Mat u8;
  f.convertTo(u8, CV_8U, 255.0);  // saturating, rounds to nearest
  return u8;
}

PersonImage render_image(const BodyShape& shape, int pid, Modality modality, int index, const ToyParams& p) {
  const std::uint64_t mod_salt = modality == Modality::Visible ? 1 : 2;
  auto rng = make_rng(p.seed, {static_cast<std::uint64_t>(pid), mod_salt, static_cast<std::uint64_t>(index), 0x1a6e});
  PoseJitter j;
  j.dx = uniform(rng, -3.0, 3.0);
  j.dy = uniform(rng, -3.0, 3.0);
  j.scale = uniform(rng, 0.95, 1.05);
  j.arm_delta = uniform(rng, -4.0, 4.0);
  j.spread_delta = uniform(rng, -0.01, 0.01);

  const int H = p.image_size.height * kSupersample;
  const int W = p.image_size.width * kSupersample;
  const cv::Mat labels = render_labels(shape, j, p.image_size);

  PersonImage im;
  im.person_id = pid;
  im.modality = modality;
  if (modality == Modality::Visible) {
    im.camera_id = index % 2 == 0 ? 1 : 2;
    std::array<cv::Vec3f, kPartCount> colors{};
    for (int part = 1; part < kPartCount; ++part) {
      const auto& base = shape.palette[static_cast<std::size_t>(part)];
      for (int c = 0; c < 3; ++c) {
        colors[part][c] = std::clamp(base[static_cast<std::size_t>(c)] + static_cast<float>(uniform(rng, -0.06, 0.06)),
                                     0.0f, 1.0f);
      }
    }
    // Keep the torso and legs distinguishable from the backdrop.
    cv::Vec3f bg_mean;
    cv::Mat bg;
    for (int attempt = 0; attempt < 100; ++attempt) {
      bg = visible_background(im.camera_id, rng, H, W, bg_mean);
      const float lb = luminance(bg_mean);
      if (std::abs(luminance(colors[kTorso]) - lb) >= 0.12f && std::abs(luminance(colors[kLegL]) - lb) >= 0.12f) break;
    }
    cv::Mat img = paint(labels, bg, colors, p.image_size);
    const double gain = uniform(rng, 0.85, 1.15);
    img *= gain;
    cv::Mat u8 = to_u8(img);
    im.pixels = detail::u8_to_tensor(u8);
  } else {
    im.camera_id = index % 2 == 0 ? 3 : 6;
    cv::Mat bg = infrared_background(im.camera_id, rng, H, W);
    const float offset = static_cast<float>(uniform(rng, -0.04, 0.04));
    std::array<cv::Vec3f, kPartCount> colors{};
    for (int part = 1; part < kPartCount; ++part) {
      const float v = shape.thermal[static_cast<std::size_t>(part)] + offset + static_cast<float>(uniform(rng, -0.03, 0.03));
      colors[part] = cv::Vec3f(v, v, v);
    }
    cv::Mat rgb = paint(labels, bg, colors, p.image_size);
    cv::Mat gray;
    cv::cvtColor(rgb, gray, cv::COLOR_RGB2GRAY);
    std::normal_distribution<float> noise(0.0f, 0.05f);
    for (int y = 0; y < gray.rows; ++y) {
      auto* row = gray.ptr<float>(y);
      for (int x = 0; x < gray.cols; ++x) {
        row[x] = std::pow(std::clamp(row[x] + noise(rng), 0.0f, 1.0f), 0.7f);
      }
    }
    im.pixels = detail::u8_to_tensor(to_u8(gray));
  }
  char rel[64];
  std::snprintf(rel, sizeof(rel), "cam%d/%04d/%04d.png", im.camera_id, pid, index);
  im.source_path = rel;
  return im;
}

cv::Mat canonical_mask(const BodyShape& shape, ImageSize size) {
  cv::Mat labels = render_labels(shape, PoseJitter{}, size);
  cv::Mat mask = labels > 0;
  cv::Mat f, out;
  mask.convertTo(f, CV_32F, 1.0 / 255.0);
  cv::resize(f, out, cv::Size(size.width, size.height), 0, 0, cv::INTER_AREA);
  return out > 0.5f;
}

double mask_iou(const cv::Mat& a, const cv::Mat& b) {
  const double inter = cv::countNonZero(a & b);
  const double uni = cv::countNonZero(a | b);
  return uni > 0 ? inter / uni : 1.0;
}

// Identity shapes are drawn in order; a candidate too similar to an earlier
// identity (mask IoU above kMaxPairIoU) is redrawn.
std::vector<BodyShape> identity_shapes(const ToyParams& p) {
  auto rng = make_rng(p.seed, {0x5ea9e});
  std::vector<BodyShape> shapes;
  std::vector<cv::Mat> masks;
  for (int i = 0; i < p.n_ids; ++i) {
    for (int attempt = 0;; ++attempt) {
      BodyShape s = sample_shape(rng);
      cv::Mat m = canonical_mask(s, p.image_size);
      const bool distinct =
          std::all_of(masks.begin(), masks.end(), [&](const cv::Mat& o) { return mask_iou(m, o) < kMaxPairIoU; });
      if (distinct || attempt > 1000) {
        shapes.push_back(s);
        masks.push_back(m);
        break;
      }
    }
  }
  return shapes;
}

void check_params(const ToyParams& p) {
  if (p.n_ids < 2) throw Error("need at least two identities");
  if (p.per_id_per_modality < 2) throw Error("need at least two images per identity and modality");
  if (p.image_size.height < 16 || p.image_size.width < 16) throw Error("toy image size below 16x16");
}

}  // namespace

Dataset generate_toy_dataset(const ToyParams& params) {
  check_params(params);
  const auto shapes = identity_shapes(params);
  Dataset ds;
  ds.layout = Layout::Toy;
  ds.image_size = params.image_size;
  for (int m = 0; m < 2; ++m) {
    const Modality modality = m == 0 ? Modality::Visible : Modality::Infrared;
    for (int i = 0; i < params.n_ids; ++i) {
      const int pid = i + 1;
      for (int k = 0; k < params.per_id_per_modality; ++k) {
        ds.images.push_back(render_image(shapes[static_cast<std::size_t>(i)], pid, modality, k, params));
      }
      ds.identities.insert(pid);
    }
  }
  return ds;
}

torch::Tensor toy_silhouette_mask(int person_id, const ToyParams& params) {
  check_params(params);
  if (person_id < 1 || person_id > params.n_ids) throw Error("toy identity out of range");
  const auto shapes = identity_shapes(params);
  cv::Mat m = canonical_mask(shapes[static_cast<std::size_t>(person_id - 1)], params.image_size);
  cv::Mat f;
  m.convertTo(f, CV_32F, 1.0 / 255.0);
  return torch::from_blob(f.data, {f.rows, f.cols}, torch::kFloat32).clone();
}

fs::path export_toy_dataset(const Dataset& dataset, const ToyParams& params, const fs::path& root) {
  fs::create_directories(root);
  for (const auto& im : dataset.images) write_png(im.pixels, root / im.source_path);
  nlohmann::json manifest{{"layout", "toy"},
                          {"generator", "toy-pedestrians/v3"},
                          {"seed", params.seed},
                          {"n_ids", params.n_ids},
                          {"per_id_per_modality", params.per_id_per_modality},
                          {"height", params.image_size.height},
                          {"width", params.image_size.width},
                          {"n_images", dataset.images.size()},
                          {"visible_cameras", {1, 2}},
                          {"infrared_cameras", {3, 6}}};
  const fs::path path = root / "manifest.json";
  std::ofstream(path) << manifest.dump(2) << "\n";
  return path;
}

}  // namespace edgeattack
