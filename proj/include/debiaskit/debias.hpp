#pragma once

#include <optional>
#include <string>
#include <vector>

#include "debiaskit/classifier.hpp"
#include "debiaskit/detector.hpp"
#include "debiaskit/manifest.hpp"

namespace debiaskit {

// Thresholds for the two per-region tests, plus proposal pruning knobs.
struct ConstraintConfig {
  double eta = 0.5;      // min IoU between a region and its best object
  double epsilon = 0.5;  // min region objectness for the label test
  double nms_threshold = 0.5;
  int max_regions = 16;
};

void validate_constraints(const ConstraintConfig& config);  // throws SpecInvalid

// Form test: the region tightly frames some detected object. Inclusive
// threshold; false when no object was found inside the region.
bool form_constraint(const Region& region, const std::optional<Region>& best_object, double eta);

// Label test: the classifier's top class matches the collection tag and the
// region score clears epsilon (inclusive). Throws MissingProbs when the
// region carries no class probabilities.
bool label_constraint(const Region& region, int expected_label, double epsilon);

// Everything recorded about one proposal, kept or not. Enough to replay the
// retention decision without the rasters.
struct RegionDecision {
  std::string image_id;
  BBox region;
  double objectness = 0.0;
  std::optional<BBox> best_object;
  double iou_value = 0.0;  // 0 when no object was found
  int predicted = -1;
  int expected = -1;
  bool form = false;
  bool label = false;
  bool retained = false;
};

struct SelectionResult {
  std::vector<Region> retained;
  std::vector<RegionDecision> decisions;  // one per input region, same order
};

// Applies both tests. best_objects runs parallel to regions, which must
// already carry class probabilities. image ids in the decisions come from
// the regions' source_image field.
SelectionResult select_regions(const std::vector<Region>& regions,
                               const std::vector<std::optional<Region>>& best_objects,
                               int expected_label, const ConstraintConfig& config);

// Corpus-level tallies plus the full decision list.
struct SelectionReport {
  int images_seen = 0;
  int images_with_no_proposals = 0;
  int regions_proposed = 0;
  int regions_retained = 0;
  std::vector<RegionDecision> decisions;
};

// JSONL: a summary header line, then one line per decision.
void save_report(const SelectionReport& report, const std::string& path);
SelectionReport load_report(const std::string& path);

struct DebiasResult {
  DatasetManifest manifest;  // cropped survivor records, source = debiased
  RasterStore rasters;       // crops keyed by the new record ids
  SelectionReport report;
};

// Proposes regions on every web record, tests each against its best
// contained object and the classifier (run on the region crop), and cuts
// the survivors out into a new dataset. Survivor ids are "<source id>-r<k>"
// with k counting retained regions per image. The region detector must use
// a looser shrink factor than the object detector; throws ModelMismatch
// otherwise, or when the classifier vocabulary disagrees with the manifest.
DebiasResult debias_dataset(const DatasetManifest& web, const RasterStore& rasters,
                            const DetectorModel& region_detector,
                            const DetectorModel& object_detector,
                            const ClassifierModel& classifier, const ConstraintConfig& config,
                            const std::string& raster_dir = "rasters/debiased", int jobs = 1);

}  // namespace debiaskit
