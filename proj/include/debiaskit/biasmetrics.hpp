#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "debiaskit/classifier.hpp"
#include "debiaskit/detector.hpp"
#include "debiaskit/manifest.hpp"

namespace debiaskit {

// Per-image object statistics: density is the detection count, scale is the
// mean detected-box area as a fraction of the frame. An image with no
// detections has scale 0 and is excluded from dataset-level scale averages.
struct ImageScaleDensity {
  double scale = 0.0;
  int density = 0;
};

ImageScaleDensity image_scale_density(const std::vector<BBox>& boxes, int image_w, int image_h);

struct ScaleDensityStats {
  double mean_scale = 0.0;    // over images with at least one detection
  double mean_density = 0.0;  // over all images
  int images = 0;
  int images_with_detections = 0;
};

// Runs the detector over every record and aggregates. When label_filter is
// non-null, only detections whose crop the classifier assigns to the record's
// tag are counted; pass null to measure the raw detection pool.
ScaleDensityStats dataset_scale_density(const DatasetManifest& m, const RasterStore& rasters,
                                        const DetectorModel& detector,
                                        const ClassifierModel* label_filter,
                                        const DetectParams& params, int jobs = 1);

// Whole-image features for every record, in manifest order.
std::vector<FeatureVector> dataset_features(const DatasetManifest& m, const RasterStore& rasters,
                                            int jobs = 1);

// Deterministically keeps n entries, preserving relative order.
std::vector<FeatureVector> subsample(const std::vector<FeatureVector>& xs, std::size_t n,
                                     std::uint64_t seed);

// Which-collection-is-this probe: a binary classifier told apart set a from
// set b on growing training fractions. accuracy near 0.5 means the two sets
// are statistically alike; the control curve re-runs the protocol on two
// halves of set a, so it shows what "alike" looks like at this sample size.
struct NtdCurve {
  std::vector<double> fractions;
  std::vector<double> accuracy;
  std::vector<double> control_accuracy;
};

// Holds out 25% of each side as the fixed test split, then trains on nested
// subsets of the remainder at each fraction. Requires |a| == |b| (throws
// SizeMismatch); callers equalize sizes with subsample() first.
NtdCurve name_that_dataset(const std::vector<FeatureVector>& a,
                           const std::vector<FeatureVector>& b,
                           const std::vector<double>& fractions, const TrainConfig& config);

// accuracy[i][j]: classifier trained on set i's 75% train split, evaluated
// on set j's held-out 25%. Row summaries report (mean, half the spread), so
// a domain-robust training set shows a high mean and a small spread.
struct CrossGenMatrix {
  double accuracy[2][2] = {{0.0, 0.0}, {0.0, 0.0}};
  double row_mean[2] = {0.0, 0.0};
  double row_half_diff[2] = {0.0, 0.0};
};

std::pair<double, double> mean_half_diff(double x, double y);

CrossGenMatrix cross_generalization(const DatasetManifest& a, const RasterStore& ra,
                                    const DatasetManifest& b, const RasterStore& rb,
                                    const TrainConfig& config, int jobs = 1);

// Fraction of images whose tag no detection supports: an image counts as
// supported when at least one detected region's crop is classified as the
// record's label. unsupported_fraction estimates the bad-tag rate.
struct LabelQualityReport {
  int images = 0;
  int supported = 0;
  double supported_fraction = 0.0;
  double unsupported_fraction = 0.0;
};

LabelQualityReport label_quality(const DatasetManifest& m, const RasterStore& rasters,
                                 const DetectorModel& detector,
                                 const ClassifierModel& classifier, const DetectParams& params,
                                 int jobs = 1);

// Grid search over the four curation thresholds. Points with
// lambda_o >= lambda_r are kept in the output but flagged invalid and not
// evaluated; points whose debiased set came out empty are flagged degenerate
// with the objective pinned to 1 (worst case).
struct SweepPoint {
  double lambda_r = 0.0;
  double lambda_o = 0.0;
  double eta = 0.0;
  double epsilon = 0.0;
  bool valid = true;
  bool degenerate = false;
  int retained = 0;
  double objective = 0.0;  // full-fraction probe accuracy vs the standard set; lower is better
};

struct SweepResult {
  std::vector<SweepPoint> points;  // loop order: lambda_r, lambda_o, eta, epsilon
  int best_index = -1;             // min objective among valid non-degenerate points
};

struct SweepConfig {
  std::vector<double> lambda_r_grid;
  std::vector<double> lambda_o_grid;
  std::vector<double> eta_grid;
  std::vector<double> epsilon_grid;
  DetectorKind detector = DetectorKind::oracle;
  int oracle_jitter_px = 0;
  double oracle_score_noise = 0.0;
  double template_score_floor = kDefaultTemplateScoreFloor;
  double nms_threshold = 0.5;
  int max_regions = 16;
  TrainConfig classifier_config;
  std::uint64_t seed = 1;
  int jobs = 1;
};

// For each grid point: build detectors at the point's shrink factors, train
// a tag classifier on the standard set's object-level weak crops, debias the
// web set, and score how distinguishable the result still is from the
// standard set. Throws EmptyGrid when any grid axis is empty.
SweepResult parameter_sweep(const DatasetManifest& standard, const RasterStore& standard_rasters,
                            const DatasetManifest& web, const RasterStore& web_rasters,
                            const SweepConfig& config);

// Scale / density reference points measured on real-world photo corpora
// (a curated collection, a raw web collection, and the web collection after
// debiasing), for orienting synthetic results. Not test targets.
struct ReferenceScaleDensity {
  const char* name;
  double scale;
  double density;
};

inline constexpr ReferenceScaleDensity kReferenceScaleDensity[] = {
    {"food-standard", 0.8536, 1.16}, {"food-web", 0.6218, 1.94},
    {"food-debiased", 0.7775, 1.23}, {"dog-standard", 0.7381, 1.00},
    {"dog-web", 0.5939, 1.45},       {"dog-debiased", 0.7465, 1.18},
};

}  // namespace debiaskit
