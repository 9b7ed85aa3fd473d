#include "debiaskit/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "debiaskit/errors.hpp"
#include "debiaskit/rng.hpp"

namespace debiaskit {

namespace {

constexpr int kBaseGray = 140;
constexpr double kMaxNoiseAmplitude = 40.0;
constexpr int kDitherSpan = 3;
constexpr int kNoiseLatticeStep = 8;
constexpr int kPlacementAttempts = 60;
constexpr double kMaxPlacementOverlap = 0.25;

// Web layouts scatter several objects. The summed object area stays under
// this budget so frames read as background-dominated search results rather
// than collages, and scattered boxes keep at most this much pairwise IoU so
// each object stands alone.
constexpr double kWebAreaBudget = 0.6;
constexpr double kScatterOverlapCap = 0.05;
constexpr int kScaleSetDraws = 40;
constexpr int kLayoutRestarts = 20;

Rgb hsv_full(double hue_degrees) {
  double h = std::fmod(hue_degrees, 360.0);
  if (h < 0) h += 360.0;
  double c = 1.0;
  double hp = h / 60.0;
  double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  if (hp < 1) { r = c; g = x; }
  else if (hp < 2) { r = x; g = c; }
  else if (hp < 3) { g = c; b = x; }
  else if (hp < 4) { g = x; b = c; }
  else if (hp < 5) { r = x; b = c; }
  else { r = c; b = x; }
  auto to8 = [](double v) { return std::uint8_t(std::lround(v * 255.0)); };
  return Rgb{to8(r), to8(g), to8(b)};
}

double pm1(std::uint64_t h) {
  return double(h >> 11) * (2.0 / 9007199254740992.0) - 1.0;
}

std::uint64_t hash3(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return mix_seed(mix_seed(seed, a), b);
}

// Smooth value noise: random lattice, bilinear interpolation, range [-1, 1].
double value_noise(std::uint64_t seed, int x, int y) {
  int gx = x / kNoiseLatticeStep;
  int gy = y / kNoiseLatticeStep;
  double fx = double(x % kNoiseLatticeStep) / kNoiseLatticeStep;
  double fy = double(y % kNoiseLatticeStep) / kNoiseLatticeStep;
  double v00 = pm1(hash3(seed, std::uint64_t(gx), std::uint64_t(gy)));
  double v10 = pm1(hash3(seed, std::uint64_t(gx + 1), std::uint64_t(gy)));
  double v01 = pm1(hash3(seed, std::uint64_t(gx), std::uint64_t(gy + 1)));
  double v11 = pm1(hash3(seed, std::uint64_t(gx + 1), std::uint64_t(gy + 1)));
  double top = v00 + (v10 - v00) * fx;
  double bot = v01 + (v11 - v01) * fx;
  return top + (bot - top) * fy;
}

std::uint8_t clamp8(double v) {
  return std::uint8_t(std::clamp(std::lround(v), 0L, 255L));
}

void paint_background(ImageRaster& img, std::uint64_t seed, double texture_level) {
  double amp = texture_level * kMaxNoiseAmplitude;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      double lum = kBaseGray + amp * value_noise(seed, x, y);
      std::uint8_t* p = img.px(x, y);
      for (int ch = 0; ch < 3; ++ch) {
        std::uint64_t dh = hash3(seed ^ 0xd17e5ULL,
                                 std::uint64_t(y) * std::uint64_t(img.width) + std::uint64_t(x),
                                 std::uint64_t(ch));
        double dither = pm1(dh) * kDitherSpan;
        p[ch] = clamp8(lum + dither);
      }
    }
  }
}

bool inside_shape(int shape, const BBox& b, int px, int py) {
  double cx = b.x + b.w / 2.0;
  double cy = b.y + b.h / 2.0;
  double fx = px + 0.5;
  double fy = py + 0.5;
  switch (shape) {
    case 0: {  // ellipse inscribed in the box
      double rx = b.w / 2.0;
      double ry = b.h / 2.0;
      double dx = (fx - cx) / rx;
      double dy = (fy - cy) / ry;
      return dx * dx + dy * dy <= 1.0;
    }
    case 1: {  // triangle: apex top-center, base along the bottom edge
      double t = (fy - b.y) / double(b.h);  // 0 at apex row, 1 at base
      if (t < 0.0 || t > 1.0) return false;
      double half = (b.w / 2.0) * t;
      return fx >= cx - half && fx <= cx + half;
    }
    default:  // rectangle fills the box
      return fx >= b.x && fx < b.x + b.w && fy >= b.y && fy < b.y + b.h;
  }
}

void paint_shape(ImageRaster& img, const BBox& b, int shape, Rgb color) {
  int x2 = std::min(b.x2(), img.width);
  int y2 = std::min(b.y2(), img.height);
  for (int y = std::max(b.y, 0); y < y2; ++y) {
    for (int x = std::max(b.x, 0); x < x2; ++x) {
      if (!inside_shape(shape, b, x, y)) continue;
      std::uint8_t* p = img.px(x, y);
      p[0] = color.r;
      p[1] = color.g;
      p[2] = color.b;
    }
  }
}

// Box size for a target area fraction, with mild aspect jitter. Rounding
// moves the area a little; placement never changes it.
BBox box_for_area(Rng& rng, int frame, double area_fraction) {
  double aspect = rng.uniform(0.9, 1.1);
  double target = area_fraction * double(frame) * double(frame);
  int w = std::clamp(int(std::lround(std::sqrt(target * aspect))), 1, frame);
  int h = std::clamp(int(std::lround(std::sqrt(target / aspect))), 1, frame);
  return BBox{0, 0, w, h};
}

BBox sized_box(Rng& rng, int frame, double scale_lo, double scale_hi) {
  return box_for_area(rng, frame, rng.uniform(scale_lo, scale_hi));
}

// Positions the box so its center lands in [cx_lo, cx_hi] x [cy_lo, cy_hi].
// Positions pushing the box out of frame, or overlapping earlier boxes too
// much, are rejected and redrawn; after kPlacementAttempts the center is
// clamped into the feasible strip instead (size stays exact either way).
BBox place_box(Rng& rng, BBox box, int frame, double cx_lo, double cx_hi,
               double cy_lo, double cy_hi, const std::vector<BBox>& placed) {
  auto at_center = [&](double cx, double cy) {
    return BBox{int(std::lround(cx - box.w / 2.0)), int(std::lround(cy - box.h / 2.0)),
                box.w, box.h};
  };
  auto in_frame = [&](const BBox& b) {
    return b.x >= 0 && b.y >= 0 && b.x2() <= frame && b.y2() <= frame;
  };
  auto overlaps = [&](const BBox& b) {
    for (const BBox& other : placed) {
      if (iou(b, other) > kMaxPlacementOverlap) return true;
    }
    return false;
  };
  BBox last{};
  for (int attempt = 0; attempt < kPlacementAttempts; ++attempt) {
    last = at_center(rng.uniform(cx_lo, cx_hi), rng.uniform(cy_lo, cy_hi));
    if (in_frame(last) && !overlaps(last)) return last;
  }
  double cx = std::clamp(rng.uniform(cx_lo, cx_hi), box.w / 2.0, frame - box.w / 2.0);
  double cy = std::clamp(rng.uniform(cy_lo, cy_hi), box.h / 2.0, frame - box.h / 2.0);
  BBox b = at_center(cx, cy);
  b.x = std::clamp(b.x, 0, frame - b.w);
  b.y = std::clamp(b.y, 0, frame - b.h);
  return b;
}

// Lays out k objects with centers in the given band, sizes drawn from the
// scale range. The scale set is redrawn until the summed area fits the
// clutter budget (widened when k * scale_lo alone exceeds it, so degenerate
// specs still terminate), then boxes are placed with strict pairwise
// separation; a failed placement restarts the whole layout. The final
// fallback relaxes the overlap cap so every spec yields some layout.
std::vector<BBox> scatter_boxes(Rng& rng, int frame, int k, double scale_lo,
                                double scale_hi, double c_lo, double c_hi) {
  double budget = std::max(kWebAreaBudget, 1.05 * k * scale_lo);
  auto at_center = [](const BBox& box, double cx, double cy) {
    return BBox{int(std::lround(cx - box.w / 2.0)), int(std::lround(cy - box.h / 2.0)),
                box.w, box.h};
  };
  auto in_frame = [&](const BBox& b) {
    return b.x >= 0 && b.y >= 0 && b.x2() <= frame && b.y2() <= frame;
  };
  auto max_iou = [](const BBox& b, const std::vector<BBox>& placed) {
    double worst = 0.0;
    for (const BBox& other : placed) worst = std::max(worst, iou(b, other));
    return worst;
  };
  for (int restart = 0; restart < kLayoutRestarts; ++restart) {
    std::vector<double> scales(std::size_t(k), scale_lo);
    bool fits = false;
    for (int draw = 0; draw < kScaleSetDraws && !fits; ++draw) {
      double sum = 0.0;
      for (double& s : scales) {
        s = rng.uniform(scale_lo, scale_hi);
        sum += s;
      }
      fits = sum <= budget;
    }
    if (!fits) continue;
    std::vector<BBox> placed;
    for (double s : scales) {
      BBox box = box_for_area(rng, frame, s);
      bool ok = false;
      for (int attempt = 0; attempt < kPlacementAttempts && !ok; ++attempt) {
        BBox b = at_center(box, rng.uniform(c_lo, c_hi), rng.uniform(c_lo, c_hi));
        if (in_frame(b) && max_iou(b, placed) <= kScatterOverlapCap) {
          placed.push_back(b);
          ok = true;
        }
      }
      if (!ok) break;
    }
    if (int(placed.size()) == k) return placed;
  }
  std::vector<BBox> placed;
  for (int j = 0; j < k; ++j) {
    BBox box = sized_box(rng, frame, scale_lo, scale_hi);
    placed.push_back(place_box(rng, box, frame, c_lo, c_hi, c_lo, c_hi, placed));
  }
  return placed;
}

std::string pad_index(int i) {
  std::string s = std::to_string(i);
  while (s.size() < 5) s.insert(s.begin(), '0');
  return s;
}

}  // namespace

void validate_spec(const SynthSpec& spec) {
  auto bad = [](const std::string& what) { throw SpecInvalid(what); };
  if (spec.num_classes < 2) bad("num_classes must be >= 2");
  if (spec.images_per_class < 1) bad("images_per_class must be >= 1");
  if (spec.image_size < 16) bad("image_size must be >= 16");
  auto check_range = [&](double lo, double hi, const std::string& name) {
    if (!(lo > 0.0) || !(hi <= 1.0) || lo > hi) bad(name + " must satisfy 0 < lo <= hi <= 1");
  };
  check_range(spec.standard_scale_lo, spec.standard_scale_hi, "standard_scale_range");
  check_range(spec.web_scale_lo, spec.web_scale_hi, "web_scale_range");
  if (spec.web_count_lo < 1 || spec.web_count_hi < spec.web_count_lo) {
    bad("web_object_count_range must satisfy 1 <= lo <= hi");
  }
  if (spec.web_offcenter_max < 0.0 || spec.web_offcenter_max >= 0.5) {
    bad("web_offcenter_max must lie in [0, 0.5)");
  }
  if (spec.label_noise_rate < 0.0 || spec.label_noise_rate > 1.0) {
    bad("label_noise_rate must lie in [0, 1]");
  }
  if (spec.outlier_rate < 0.0 || spec.outlier_rate > 1.0) bad("outlier_rate must lie in [0, 1]");
  if (spec.label_noise_rate + spec.outlier_rate > 1.0) {
    bad("label_noise_rate + outlier_rate must not exceed 1");
  }
  if (spec.background_texture_level < 0.0 || spec.background_texture_level > 1.0) {
    bad("background_texture_level must lie in [0, 1]");
  }
  if (spec.web_frame_level < 0.0 || spec.web_frame_level > 1.0) {
    bad("web_frame_level must lie in [0, 1]");
  }
  if (spec.web_hue_jitter < 0.0 || spec.web_hue_jitter > 180.0) {
    bad("web_hue_jitter must lie in [0, 180]");
  }
}

Rgb class_color(int class_id, int num_classes) {
  return hsv_full(360.0 * double(class_id) / double(num_classes));
}

Rgb class_color_shifted(int class_id, int num_classes, double hue_shift) {
  return hsv_full(360.0 * double(class_id) / double(num_classes) + hue_shift);
}

Rgb distractor_color(int palette, int num_classes) {
  return hsv_full(360.0 * (double(palette) + 0.5) / double(num_classes));
}

int shape_for_class(int class_id) { return class_id % 3; }

DatasetManifest generate_standard(const SynthSpec& spec, const std::string& id_prefix,
                                  const std::string& raster_dir) {
  validate_spec(spec);
  const int frame = spec.image_size;
  DatasetManifest m;
  m.num_classes = spec.num_classes;
  int total = spec.num_classes * spec.images_per_class;
  for (int i = 0; i < total; ++i) {
    int tag = i / spec.images_per_class;
    Rng rng(mix_seed(spec.seed, 0x57d0000ULL + std::uint64_t(i)));
    ImageRecord rec;
    rec.id = id_prefix + pad_index(i);
    rec.source = Source::standard;
    rec.label = tag;
    rec.width = frame;
    rec.height = frame;
    rec.raster_path = raster_dir + "/" + rec.id + ".ppm";
    rec.render_seed = mix_seed(spec.seed, 0xbac4000ULL + std::uint64_t(i));
    rec.texture_level = spec.background_texture_level;
    BBox box = sized_box(rng, frame, spec.standard_scale_lo, spec.standard_scale_hi);
    double c = frame / 2.0;
    double jitter = 0.05 * frame;
    box = place_box(rng, box, frame, c - jitter, c + jitter, c - jitter, c + jitter, {});
    rec.planted.push_back(PlantedObject{box, tag});
    m.records.push_back(std::move(rec));
  }
  return m;
}

DatasetManifest generate_web(const SynthSpec& spec, const std::string& id_prefix,
                             const std::string& raster_dir) {
  validate_spec(spec);
  const int frame = spec.image_size;
  const int L = spec.num_classes;
  const int total = L * spec.images_per_class;

  // Exact-count assignment: shuffle image indices, mark the first block as
  // outliers and the next as noisy-labeled.
  std::vector<int> perm(std::size_t(total), 0);
  std::iota(perm.begin(), perm.end(), 0);
  Rng assign_rng(mix_seed(spec.seed, 0xa551ULL));
  assign_rng.shuffle(perm);
  int n_outlier = int(std::floor(spec.outlier_rate * total));
  int n_noisy = int(std::floor(spec.label_noise_rate * total));
  std::vector<int> role(std::size_t(total), 0);  // 0 clean, 1 noisy, 2 outlier
  for (int k = 0; k < n_outlier; ++k) role[std::size_t(perm[std::size_t(k)])] = 2;
  for (int k = n_outlier; k < n_outlier + n_noisy; ++k) role[std::size_t(perm[std::size_t(k)])] = 1;

  DatasetManifest m;
  m.num_classes = L;
  for (int i = 0; i < total; ++i) {
    int tag = i / spec.images_per_class;
    Rng rng(mix_seed(spec.seed, 0x3eb0000ULL + std::uint64_t(i)));
    ImageRecord rec;
    rec.id = id_prefix + pad_index(i);
    rec.source = Source::web;
    rec.label = tag;
    rec.width = frame;
    rec.height = frame;
    rec.raster_path = raster_dir + "/" + rec.id + ".ppm";
    rec.render_seed = mix_seed(spec.seed, 0xfade000ULL + std::uint64_t(i));
    rec.texture_level = spec.background_texture_level;
    rec.frame_level = spec.web_frame_level;

    double c = frame / 2.0;
    double off = spec.web_offcenter_max * frame;
    double c_lo = c - off;
    double c_hi = c + off;

    if (role[std::size_t(i)] == 2) {
      // Outlier: only distractor shapes, palette keyed to the tag. Search
      // noise tends to be query-consistent, so the off-topic content for a
      // given tag looks alike across its images.
      int k = rng.uniform_int(1, 3);
      auto boxes = scatter_boxes(rng, frame, k, spec.web_scale_lo, spec.web_scale_hi,
                                 c_lo, c_hi);
      for (const BBox& b : boxes) rec.distractors.push_back(DistractorObject{b, tag});
    } else {
      bool noisy = role[std::size_t(i)] == 1;
      int k = rng.uniform_int(spec.web_count_lo, spec.web_count_hi);
      // Companions first, subject last: later planted entries paint on top,
      // so the subject is never fully occluded.
      int subject_class = noisy ? (tag + 1) % L : tag;
      std::vector<int> classes;
      for (int j = 0; j < k - 1; ++j) {
        int cls = rng.uniform_int(0, L - 1);
        if (noisy && cls == tag) cls = (cls + 1) % L;
        classes.push_back(cls);
      }
      classes.push_back(subject_class);
      auto boxes = scatter_boxes(rng, frame, k, spec.web_scale_lo, spec.web_scale_hi,
                                 c_lo, c_hi);
      for (int j = 0; j < k; ++j) {
        // Jitter drawn last so a zero-jitter spec consumes the exact same
        // random stream as before the knob existed.
        double shift = spec.web_hue_jitter > 0.0
                           ? rng.uniform(-spec.web_hue_jitter, spec.web_hue_jitter)
                           : 0.0;
        rec.planted.push_back(PlantedObject{boxes[std::size_t(j)], classes[std::size_t(j)], shift});
      }
    }
    m.records.push_back(std::move(rec));
  }
  return m;
}

// The ring tint is capped well below the chroma threshold that defines the
// content mask, so styling never registers as object to the detectors; it
// only moves histogram mass between low-chroma bins.
constexpr double kFrameTintScale = 0.3;
constexpr double kFrameWidthFrac = 0.015;

void paint_frame(ImageRaster& img, int tag, int num_classes, double level) {
  Rgb hue = class_color(tag, num_classes);
  double t = kFrameTintScale * level;
  Rgb tint{clamp8(kBaseGray + t * (hue.r - kBaseGray)),
           clamp8(kBaseGray + t * (hue.g - kBaseGray)),
           clamp8(kBaseGray + t * (hue.b - kBaseGray))};
  int w = std::max(1, int(std::lround(kFrameWidthFrac * std::min(img.width, img.height))));
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      if (x >= w && x < img.width - w && y >= w && y < img.height - w) continue;
      std::uint8_t* p = img.px(x, y);
      p[0] = tint.r;
      p[1] = tint.g;
      p[2] = tint.b;
    }
  }
}

ImageRaster render(const ImageRecord& record, int num_classes) {
  ImageRaster img = ImageRaster::blank(record.width, record.height);
  paint_background(img, record.render_seed, record.texture_level);
  if (record.frame_level > 0.0) {
    paint_frame(img, record.label, num_classes, record.frame_level);
  }
  for (const auto& d : record.distractors) {
    paint_shape(img, d.box, shape_for_class(d.palette), distractor_color(d.palette, num_classes));
  }
  for (const auto& p : record.planted) {
    paint_shape(img, p.box, shape_for_class(p.class_id),
                class_color_shifted(p.class_id, num_classes, p.hue_shift));
  }
  return img;
}

}  // namespace debiaskit
