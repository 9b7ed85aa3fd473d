#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "debiaskit/geometry.hpp"
#include "debiaskit/image.hpp"

namespace debiaskit {

struct PlantedObject {
  BBox box;
  int class_id = 0;
  double hue_shift = 0.0;  // degrees added to the class hue when rendering
  bool operator==(const PlantedObject&) const = default;
};

// Shapes rendered from the out-of-vocabulary palette; present only in
// outlier images. palette indexes the off-vocabulary hue wheel.
struct DistractorObject {
  BBox box;
  int palette = 0;
  bool operator==(const DistractorObject&) const = default;
};

enum class Source { standard, web, debiased };

std::string to_string(Source s);
Source source_from_string(const std::string& s);

// How a debiased crop came to be: which web image, which proposal window,
// and the constraint evaluation that retained it.
struct Provenance {
  std::string image_id;
  BBox region;
  int form = 0;
  int label = 0;
  double iou_value = 0.0;
  double objectness = 0.0;
  int predicted = -1;
  int tag = -1;
  bool operator==(const Provenance&) const = default;
};

struct ImageRecord {
  std::string id;
  Source source = Source::standard;
  int label = 0;
  int width = 0;
  int height = 0;
  std::string raster_path;  // relative to the manifest's directory
  std::vector<PlantedObject> planted;
  std::vector<DistractorObject> distractors;
  std::uint64_t render_seed = 0;
  double texture_level = 0.0;
  // Strength of a tag-keyed tinted ring at the image border, the kind of
  // styling web pages stamp onto search results. 0 means no ring.
  double frame_level = 0.0;
  std::optional<Provenance> provenance;
  bool operator==(const ImageRecord&) const = default;
};

struct DatasetManifest {
  int num_classes = 0;
  std::vector<ImageRecord> records;
  bool operator==(const DatasetManifest&) const = default;
};

// JSONL: a header line carrying the class vocabulary, then one record per
// line. Loading reports malformed lines with their 1-based line number.
void save_manifest(const DatasetManifest& m, const std::string& path);
DatasetManifest load_manifest(const std::string& path);

// Structural checks: labels in [0, num_classes), sizes >= 1, planted and
// distractor boxes inside the frame, unique ids. Throws MalformedFile.
void validate_manifest(const DatasetManifest& m);

// Rasters keyed by record id. Tests fill it directly; the CLI loads PPM
// files next to a manifest.
class RasterStore {
public:
  static RasterStore from_manifest(const DatasetManifest& m, const std::string& base_dir);
  void put(const std::string& id, ImageRaster raster);
  const ImageRaster& get(const std::string& id) const;  // throws MissingRaster
  bool has(const std::string& id) const;
  std::size_t size() const { return rasters_.size(); }

private:
  std::map<std::string, ImageRaster> rasters_;
};

}  // namespace debiaskit
