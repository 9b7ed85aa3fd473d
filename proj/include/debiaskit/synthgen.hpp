#pragma once

#include <cstdint>
#include <string>

#include "debiaskit/manifest.hpp"

namespace debiaskit {

// Knobs for the paired image corpora. Scales are planted-box area fractions
// of the whole frame. label_noise_rate is the fraction of web images whose
// tag matches none of their planted objects; outlier_rate is the fraction
// with no in-vocabulary object at all. The two sets are disjoint.
struct SynthSpec {
  int num_classes = 3;
  int images_per_class = 80;
  int image_size = 64;
  double standard_scale_lo = 0.55;
  double standard_scale_hi = 0.85;
  double web_scale_lo = 0.10;
  double web_scale_hi = 0.70;
  int web_count_lo = 1;
  int web_count_hi = 4;
  double web_offcenter_max = 0.35;
  double label_noise_rate = 0.2;
  double outlier_rate = 0.15;
  double background_texture_level = 0.5;
  // Web-only styling artifacts, both off by default. web_frame_level adds a
  // tag-keyed tinted ring at the image border (search results from one query
  // share page styling); web_hue_jitter wobbles each planted object's hue by
  // up to the given number of degrees (web imagery is less color-faithful
  // than curated benchmarks).
  double web_frame_level = 0.0;
  double web_hue_jitter = 0.0;
  std::uint64_t seed = 1;
};

void validate_spec(const SynthSpec& spec);  // throws SpecInvalid

// One centered object per image, correct labels, scale from the standard
// range. Records carry everything render() needs, so re-rendering is
// byte-identical.
DatasetManifest generate_standard(const SynthSpec& spec,
                                  const std::string& id_prefix = "std-",
                                  const std::string& raster_dir = "rasters/standard");

// 1..k off-center objects per image. Noisy images plant only non-matching
// classes (the tag's neighbor class plus random others); outlier images
// plant only out-of-vocabulary distractor shapes keyed to the tag's palette
// slot. Noisy and outlier counts are exact: floor(rate * N) each.
DatasetManifest generate_web(const SynthSpec& spec,
                             const std::string& id_prefix = "web-",
                             const std::string& raster_dir = "rasters/web");

// Rasterizes background texture, then distractors, then planted shapes in
// list order (later entries paint on top). Deterministic in the record.
ImageRaster render(const ImageRecord& record, int num_classes);

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
};

// Classes are (shape, color) pairs: shape cycles circle / triangle /
// rectangle, hue is distinct per class. Distractor palette hues sit halfway
// between adjacent class hues, so they never collide with the vocabulary.
Rgb class_color(int class_id, int num_classes);
Rgb distractor_color(int palette, int num_classes);
int shape_for_class(int class_id);  // 0 circle, 1 triangle, 2 rectangle

}  // namespace debiaskit
