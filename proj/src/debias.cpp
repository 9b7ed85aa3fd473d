#include "debiaskit/debias.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>

#include "debiaskit/errors.hpp"
#include "debiaskit/features.hpp"
#include "debiaskit/parallel.hpp"

namespace debiaskit {

using nlohmann::json;

void validate_constraints(const ConstraintConfig& config) {
  if (!(config.eta >= 0.0 && config.eta <= 1.0)) {
    throw SpecInvalid("eta must lie in [0, 1]");
  }
  if (!(config.epsilon >= 0.0 && config.epsilon <= 1.0)) {
    throw SpecInvalid("epsilon must lie in [0, 1]");
  }
  if (!(config.nms_threshold >= 0.0 && config.nms_threshold <= 1.0)) {
    throw SpecInvalid("nms_threshold must lie in [0, 1]");
  }
  if (config.max_regions < 1) throw SpecInvalid("max_regions must be >= 1");
}

bool form_constraint(const Region& region, const std::optional<Region>& best_object,
                     double eta) {
  if (!best_object) return false;
  return iou(best_object->box, region.box) >= eta;
}

bool label_constraint(const Region& region, int expected_label, double epsilon) {
  if (!region.class_probs) {
    throw MissingProbs("region has no class probabilities for the label test");
  }
  return argmax_class(*region.class_probs) == expected_label && region.objectness >= epsilon;
}

SelectionResult select_regions(const std::vector<Region>& regions,
                               const std::vector<std::optional<Region>>& best_objects,
                               int expected_label, const ConstraintConfig& config) {
  if (regions.size() != best_objects.size()) {
    throw DimensionMismatch("regions and best_objects differ in length");
  }
  SelectionResult out;
  for (std::size_t i = 0; i < regions.size(); ++i) {
    const Region& r = regions[i];
    const std::optional<Region>& best = best_objects[i];
    RegionDecision d;
    d.image_id = r.source_image;
    d.region = r.box;
    d.objectness = r.objectness;
    if (best) {
      d.best_object = best->box;
      d.iou_value = iou(best->box, r.box);
    }
    d.expected = expected_label;
    if (r.class_probs) d.predicted = argmax_class(*r.class_probs);
    d.form = form_constraint(r, best, config.eta);
    d.label = label_constraint(r, expected_label, config.epsilon);
    d.retained = d.form && d.label;
    if (d.retained) out.retained.push_back(r);
    out.decisions.push_back(std::move(d));
  }
  return out;
}

namespace {

json decision_to_json(const RegionDecision& d) {
  json j = {{"image_id", d.image_id},
            {"region", {d.region.x, d.region.y, d.region.w, d.region.h}},
            {"objectness", d.objectness},
            {"iou", d.iou_value},
            {"predicted", d.predicted},
            {"expected", d.expected},
            {"form", d.form},
            {"label", d.label},
            {"retained", d.retained}};
  if (d.best_object) {
    j["best_object"] = {d.best_object->x, d.best_object->y, d.best_object->w, d.best_object->h};
  } else {
    j["best_object"] = nullptr;
  }
  return j;
}

RegionDecision decision_from_json(const json& j) {
  RegionDecision d;
  d.image_id = j.at("image_id").get<std::string>();
  const auto& r = j.at("region");
  d.region = BBox{r[0].get<int>(), r[1].get<int>(), r[2].get<int>(), r[3].get<int>()};
  d.objectness = j.at("objectness").get<double>();
  if (!j.at("best_object").is_null()) {
    const auto& b = j.at("best_object");
    d.best_object = BBox{b[0].get<int>(), b[1].get<int>(), b[2].get<int>(), b[3].get<int>()};
  }
  d.iou_value = j.at("iou").get<double>();
  d.predicted = j.at("predicted").get<int>();
  d.expected = j.at("expected").get<int>();
  d.form = j.at("form").get<bool>();
  d.label = j.at("label").get<bool>();
  d.retained = j.at("retained").get<bool>();
  return d;
}

// Everything produced from one source image, so records can run in parallel
// and still merge in input order.
struct PerImage {
  bool no_proposals = false;
  std::vector<RegionDecision> decisions;
  std::vector<ImageRecord> records;
  std::vector<ImageRaster> crops;
};

}  // namespace

void save_report(const SelectionReport& report, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw MalformedFile("cannot open for write: " + path);
  json header = {{"format", "debiaskit-selection"},
                 {"version", 1},
                 {"images_seen", report.images_seen},
                 {"images_with_no_proposals", report.images_with_no_proposals},
                 {"regions_proposed", report.regions_proposed},
                 {"regions_retained", report.regions_retained}};
  f << header.dump() << "\n";
  for (const auto& d : report.decisions) f << decision_to_json(d).dump() << "\n";
}

SelectionReport load_report(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw MalformedFile("cannot open: " + path);
  std::string line;
  std::size_t line_no = 0;
  SelectionReport report;
  bool saw_header = false;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::string where = path + ":" + std::to_string(line_no) + ": ";
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw MalformedFile(where + e.what());
    }
    try {
      if (!saw_header) {
        if (j.value("format", "") != "debiaskit-selection") {
          throw MalformedFile(where + "expected a debiaskit-selection header");
        }
        report.images_seen = j.at("images_seen").get<int>();
        report.images_with_no_proposals = j.at("images_with_no_proposals").get<int>();
        report.regions_proposed = j.at("regions_proposed").get<int>();
        report.regions_retained = j.at("regions_retained").get<int>();
        saw_header = true;
        continue;
      }
      report.decisions.push_back(decision_from_json(j));
    } catch (const json::exception& e) {
      throw MalformedFile(where + e.what());
    }
  }
  if (!saw_header) throw MalformedFile(path + ": empty report");
  return report;
}

DebiasResult debias_dataset(const DatasetManifest& web, const RasterStore& rasters,
                            const DetectorModel& region_detector,
                            const DetectorModel& object_detector,
                            const ClassifierModel& classifier, const ConstraintConfig& config,
                            const std::string& raster_dir, int jobs) {
  validate_constraints(config);
  if (web.records.empty()) throw EmptyDataset("nothing to debias");
  if (!(region_detector.lambda_used > object_detector.lambda_used)) {
    throw ModelMismatch("region detector must use a looser shrink factor than the object "
                        "detector");
  }
  if (classifier.class_count != web.num_classes) {
    throw ModelMismatch("classifier trained for " + std::to_string(classifier.class_count) +
                        " classes, manifest declares " + std::to_string(web.num_classes));
  }
  for (const auto& rec : web.records) {
    if (rec.source != Source::web) {
      throw SpecInvalid("debias input must be web-sourced, record " + rec.id + " is not");
    }
  }

  bool needs_windows = region_detector.kind == DetectorKind::template_match ||
                       object_detector.kind == DetectorKind::template_match;
  DetectParams params;
  params.nms_threshold = config.nms_threshold;
  params.max_regions = config.max_regions;

  std::vector<PerImage> per_image(web.records.size());
  parallel_for(jobs, web.records.size(), [&](std::size_t idx) {
    const ImageRecord& rec = web.records[idx];
    const ImageRaster& img = rasters.get(rec.id);

    WindowFeatureCache cache;
    const WindowFeatureCache* cptr = nullptr;
    if (needs_windows) {
      cache = compute_window_features(img);
      cptr = &cache;
    }

    std::vector<Region> regions = detect_regions(region_detector, rec, img, params, cptr);
    std::vector<std::optional<Region>> bests;
    for (Region& r : regions) {
      bests.push_back(detect_best_object_within(object_detector, rec, img, r, cptr));
      r.class_probs = predict_probs(classifier, extract_features(crop(img, r.box)));
    }
    SelectionResult sel = select_regions(regions, bests, rec.label, config);

    PerImage& out = per_image[idx];
    out.no_proposals = regions.empty();
    out.decisions = std::move(sel.decisions);
    int k = 0;
    for (std::size_t i = 0; i < regions.size(); ++i) {
      const RegionDecision& d = out.decisions[i];
      if (!d.retained) continue;
      const BBox& cut = d.region;

      ImageRecord nr;
      nr.id = rec.id + "-r" + std::to_string(k++);
      nr.source = Source::debiased;
      nr.label = rec.label;
      nr.width = cut.w;
      nr.height = cut.h;
      nr.raster_path = raster_dir + "/" + nr.id + ".ppm";
      // Planted objects and distractors survive when their center falls in
      // the crop; coordinates shift into the crop frame and clip to it.
      BBox frame{0, 0, cut.w, cut.h};
      for (const auto& p : rec.planted) {
        double cx = p.box.x + p.box.w / 2.0;
        double cy = p.box.y + p.box.h / 2.0;
        if (cx < cut.x || cx >= cut.x2() || cy < cut.y || cy >= cut.y2()) continue;
        BBox shifted{p.box.x - cut.x, p.box.y - cut.y, p.box.w, p.box.h};
        if (auto clipped = intersect_box(shifted, frame)) {
          nr.planted.push_back(PlantedObject{*clipped, p.class_id});
        }
      }
      for (const auto& dd : rec.distractors) {
        double cx = dd.box.x + dd.box.w / 2.0;
        double cy = dd.box.y + dd.box.h / 2.0;
        if (cx < cut.x || cx >= cut.x2() || cy < cut.y || cy >= cut.y2()) continue;
        BBox shifted{dd.box.x - cut.x, dd.box.y - cut.y, dd.box.w, dd.box.h};
        if (auto clipped = intersect_box(shifted, frame)) {
          nr.distractors.push_back(DistractorObject{*clipped, dd.palette});
        }
      }
      nr.render_seed = rec.render_seed;
      nr.texture_level = rec.texture_level;
      Provenance prov;
      prov.image_id = rec.id;
      prov.region = cut;
      prov.form = 1;
      prov.label = 1;
      prov.iou_value = d.iou_value;
      prov.objectness = d.objectness;
      prov.predicted = d.predicted;
      prov.tag = rec.label;
      nr.provenance = prov;

      out.records.push_back(std::move(nr));
      out.crops.push_back(crop(img, cut));
    }
  });

  DebiasResult result;
  result.manifest.num_classes = web.num_classes;
  for (PerImage& pi : per_image) {
    ++result.report.images_seen;
    if (pi.no_proposals) ++result.report.images_with_no_proposals;
    result.report.regions_proposed += int(pi.decisions.size());
    for (auto& d : pi.decisions) {
      if (d.retained) ++result.report.regions_retained;
      result.report.decisions.push_back(std::move(d));
    }
    for (std::size_t i = 0; i < pi.records.size(); ++i) {
      result.rasters.put(pi.records[i].id, std::move(pi.crops[i]));
      result.manifest.records.push_back(std::move(pi.records[i]));
    }
  }
  return result;
}

}  // namespace debiaskit
