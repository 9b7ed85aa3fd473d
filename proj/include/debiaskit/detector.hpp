#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "debiaskit/features.hpp"
#include "debiaskit/geometry.hpp"
#include "debiaskit/manifest.hpp"
#include "debiaskit/weaksup.hpp"

namespace debiaskit {

enum class DetectorKind { oracle, template_match, external };

std::string to_string(DetectorKind k);
DetectorKind detector_kind_from_string(const std::string& s);

struct Detection {
  BBox box;
  double objectness = 0.0;
  std::optional<std::vector<double>> class_probs;
};

// Proposals stored per image id, round-trippable as JSONL.
struct PredictionFile {
  std::map<std::string, std::vector<Detection>> by_image;
};

inline constexpr double kDefaultTemplateScoreFloor = 0.8;

struct DetectorModel {
  DetectorKind kind = DetectorKind::template_match;
  double lambda_used = 0.9;
  double score_floor = 0.0;
  int class_count = 0;
  std::vector<FeatureVector> templates;  // one unit vector per class
  int oracle_jitter_px = 0;
  double oracle_score_noise = 0.0;
  std::uint64_t seed = 0;
  std::optional<PredictionFile> predictions;
};

struct DetectParams {
  double nms_threshold = 0.5;
  int max_regions = 16;
};

// Per-class mean of weak-crop features, unit-normalized. Items are folded in
// sorted image-id order so the sums never depend on input order.
DetectorModel train_template_detector(const std::vector<SupervisionItem>& supervision,
                                      const RasterStore& rasters, double lambda,
                                      double score_floor = kDefaultTemplateScoreFloor);

DetectorModel make_oracle_detector(double lambda, int jitter_px, double score_noise,
                                   std::uint64_t seed);
DetectorModel make_external_detector(PredictionFile predictions, double lambda);

// Square sliding windows with sides {0.3, 0.45, 0.6, 0.8, 0.95} of the short
// image side, stride = side / 4. Ordered by scale, then y, then x.
std::vector<BBox> sliding_windows(int image_w, int image_h);

// One pyramid window and its localized view: the window slid onto the center
// of the dominant connected piece of high-chroma content it saw (size
// unchanged, kept in frame), plus that view's features. content is the
// chroma-mask fraction of the localized view; 0 means the window saw only
// background and carries no feature. fragment marks views whose dominant
// piece presses against a view edge the image continues past: they show a
// piece of something larger, not a whole object with margin. span is the
// dominant piece's bounding-box extent relative to the view (the smaller of
// the two axis ratios); a well-fitted view has a high span, an oversized
// window staring at a small object a low one.
struct WindowEntry {
  BBox window;
  BBox box;
  double content = 0.0;
  double span = 0.0;
  bool fragment = false;
  FeatureVector feature;
};

// Localized window views computed once per image so region and object
// scoring can share them.
struct WindowFeatureCache {
  std::vector<WindowEntry> entries;
};
WindowFeatureCache compute_window_features(const ImageRaster& image);

// Scored proposals for a whole image: score, floor, NMS, top max_regions.
// template: each window is recentered onto its content (empty windows and
// interior views that are all content are dropped, and windows recentering
// to the same box collapse); objectness is the view's best per-class cosine
// mapped to [0, 1].
// oracle: planted boxes dilated by 1/lambda_used (clamped), optional jitter,
// objectness 1 - noise; distractors yield nothing.
// external: stored proposals for the record id (MissingPrediction if the id
// has no entry), boxes clamped to the frame.
std::vector<Region> detect_regions(const DetectorModel& model, const ImageRecord& record,
                                   const ImageRaster& image, const DetectParams& params);
std::vector<Region> detect_regions(const DetectorModel& model, const ImageRecord& record,
                                   const ImageRaster& image, const DetectParams& params,
                                   const WindowFeatureCache* cache);

// Best-scoring proposal that lies fully inside region.box, or absent when no
// candidate does. The result never extends past the region. The template
// kind scans windows sized relative to the region (0.6 to 1.0 of its short
// side), since the image-wide pyramid grid rarely aligns with an arbitrary
// region box.
std::optional<Region> detect_best_object_within(const DetectorModel& model,
                                                const ImageRecord& record,
                                                const ImageRaster& image, const Region& region);
std::optional<Region> detect_best_object_within(const DetectorModel& model,
                                                const ImageRecord& record,
                                                const ImageRaster& image, const Region& region,
                                                const WindowFeatureCache* cache);

// JSONL, one image per line: {"image_id":..., "detections":[{"box":[x,y,w,h],
// "objectness":..., "class_probs":[...]}]}. Loading reports offending line
// numbers; objectness must lie in [0, 1].
PredictionFile load_predictions(const std::string& path);
void export_predictions(const PredictionFile& predictions, const std::string& path);

void save_detector(const DetectorModel& model, const std::string& path);
DetectorModel load_detector(const std::string& path);

}  // namespace debiaskit
