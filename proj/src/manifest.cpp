#include "debiaskit/manifest.hpp"

#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

#include "debiaskit/errors.hpp"

namespace debiaskit {

using nlohmann::json;

std::string to_string(Source s) {
  switch (s) {
    case Source::standard: return "standard";
    case Source::web: return "web";
    case Source::debiased: return "debiased";
  }
  return "standard";
}

Source source_from_string(const std::string& s) {
  if (s == "standard") return Source::standard;
  if (s == "web") return Source::web;
  if (s == "debiased") return Source::debiased;
  throw MalformedFile("unknown source tag: " + s);
}

namespace {

json box_to_json(const BBox& b) { return json::array({b.x, b.y, b.w, b.h}); }

BBox box_from_json(const json& j) {
  if (!j.is_array() || j.size() != 4) throw MalformedFile("box must be [x,y,w,h]");
  return BBox{j[0].get<int>(), j[1].get<int>(), j[2].get<int>(), j[3].get<int>()};
}

json record_to_json(const ImageRecord& r) {
  json planted = json::array();
  for (const auto& p : r.planted) {
    json pj = {{"x", p.box.x}, {"y", p.box.y}, {"w", p.box.w}, {"h", p.box.h},
               {"class_id", p.class_id}};
    if (p.hue_shift != 0.0) pj["hue_shift"] = p.hue_shift;
    planted.push_back(std::move(pj));
  }
  json distractors = json::array();
  for (const auto& d : r.distractors) {
    distractors.push_back({{"x", d.box.x}, {"y", d.box.y}, {"w", d.box.w}, {"h", d.box.h},
                           {"palette", d.palette}});
  }
  json j = {{"id", r.id},
            {"source", to_string(r.source)},
            {"label", r.label},
            {"width", r.width},
            {"height", r.height},
            {"raster_path", r.raster_path},
            {"planted", planted},
            {"distractors", distractors},
            {"render_seed", r.render_seed},
            {"texture_level", r.texture_level}};
  if (r.frame_level != 0.0) j["frame_level"] = r.frame_level;
  if (r.provenance) {
    const Provenance& p = *r.provenance;
    j["provenance"] = {{"image_id", p.image_id}, {"region", box_to_json(p.region)},
                       {"form", p.form},         {"label", p.label},
                       {"iou", p.iou_value},     {"objectness", p.objectness},
                       {"predicted", p.predicted}, {"tag", p.tag}};
  }
  return j;
}

ImageRecord record_from_json(const json& j) {
  ImageRecord r;
  r.id = j.at("id").get<std::string>();
  r.source = source_from_string(j.at("source").get<std::string>());
  r.label = j.at("label").get<int>();
  r.width = j.at("width").get<int>();
  r.height = j.at("height").get<int>();
  r.raster_path = j.at("raster_path").get<std::string>();
  for (const auto& p : j.at("planted")) {
    r.planted.push_back(PlantedObject{
        BBox{p.at("x").get<int>(), p.at("y").get<int>(), p.at("w").get<int>(), p.at("h").get<int>()},
        p.at("class_id").get<int>(), p.value("hue_shift", 0.0)});
  }
  for (const auto& d : j.value("distractors", json::array())) {
    r.distractors.push_back(DistractorObject{
        BBox{d.at("x").get<int>(), d.at("y").get<int>(), d.at("w").get<int>(), d.at("h").get<int>()},
        d.at("palette").get<int>()});
  }
  r.render_seed = j.value("render_seed", std::uint64_t(0));
  r.texture_level = j.value("texture_level", 0.0);
  r.frame_level = j.value("frame_level", 0.0);
  if (j.contains("provenance")) {
    const json& p = j.at("provenance");
    Provenance prov;
    prov.image_id = p.at("image_id").get<std::string>();
    prov.region = box_from_json(p.at("region"));
    prov.form = p.at("form").get<int>();
    prov.label = p.at("label").get<int>();
    prov.iou_value = p.at("iou").get<double>();
    prov.objectness = p.at("objectness").get<double>();
    prov.predicted = p.at("predicted").get<int>();
    prov.tag = p.at("tag").get<int>();
    r.provenance = prov;
  }
  return r;
}

}  // namespace

void save_manifest(const DatasetManifest& m, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw MalformedFile("cannot open for write: " + path);
  json header = {{"format", "debiaskit-manifest"}, {"version", 1},
                 {"num_classes", m.num_classes}};
  f << header.dump() << "\n";
  for (const auto& r : m.records) f << record_to_json(r).dump() << "\n";
  if (!f) throw MalformedFile("short write: " + path);
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw MalformedFile("cannot open: " + path);
  DatasetManifest m;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw MalformedFile(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    try {
      if (!have_header) {
        if (j.value("format", "") != "debiaskit-manifest") {
          throw MalformedFile("missing manifest header");
        }
        m.num_classes = j.at("num_classes").get<int>();
        have_header = true;
        continue;
      }
      m.records.push_back(record_from_json(j));
    } catch (const json::exception& e) {
      throw MalformedFile(path + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const MalformedFile& e) {
      throw MalformedFile(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!have_header) throw MalformedFile(path + ": empty manifest (no header line)");
  return m;
}

void validate_manifest(const DatasetManifest& m) {
  if (m.num_classes < 1) throw MalformedFile("num_classes must be >= 1");
  std::set<std::string> ids;
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    const ImageRecord& r = m.records[i];
    std::string where = "record " + std::to_string(i + 1) + " (" + r.id + "): ";
    if (r.id.empty()) throw MalformedFile(where + "empty id");
    if (!ids.insert(r.id).second) throw MalformedFile(where + "duplicate id");
    if (r.label < 0 || r.label >= m.num_classes) {
      throw MalformedFile(where + "label " + std::to_string(r.label) +
                          " outside [0, " + std::to_string(m.num_classes) + ")");
    }
    if (r.width < 1 || r.height < 1) throw MalformedFile(where + "non-positive frame");
    for (const auto& p : r.planted) {
      if (p.class_id < 0 || p.class_id >= m.num_classes) {
        throw MalformedFile(where + "planted class_id outside vocabulary");
      }
      if (p.box.x < 0 || p.box.y < 0 || p.box.w < 1 || p.box.h < 1 ||
          p.box.x2() > r.width || p.box.y2() > r.height) {
        throw MalformedFile(where + "planted box outside frame");
      }
    }
    for (const auto& d : r.distractors) {
      if (d.box.x < 0 || d.box.y < 0 || d.box.w < 1 || d.box.h < 1 ||
          d.box.x2() > r.width || d.box.y2() > r.height) {
        throw MalformedFile(where + "distractor box outside frame");
      }
    }
  }
}

RasterStore RasterStore::from_manifest(const DatasetManifest& m, const std::string& base_dir) {
  RasterStore store;
  for (const auto& r : m.records) {
    std::filesystem::path p = std::filesystem::path(base_dir) / r.raster_path;
    store.put(r.id, read_ppm(p.string()));
  }
  return store;
}

void RasterStore::put(const std::string& id, ImageRaster raster) {
  rasters_[id] = std::move(raster);
}

const ImageRaster& RasterStore::get(const std::string& id) const {
  auto it = rasters_.find(id);
  if (it == rasters_.end()) throw MissingRaster("no raster for image id: " + id);
  return it->second;
}

bool RasterStore::has(const std::string& id) const { return rasters_.count(id) > 0; }

}  // namespace debiaskit
