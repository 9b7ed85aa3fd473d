#include "debiaskit/weaksup.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "debiaskit/errors.hpp"

namespace debiaskit {

using nlohmann::json;

void validate_weakbox(const WeakBoxConfig& cfg) {
  if (!(cfg.lambda_o > 0.0) || !(cfg.lambda_o < cfg.lambda_r) || !(cfg.lambda_r <= 1.0)) {
    throw SpecInvalid("lambda values must satisfy 0 < lambda_o < lambda_r <= 1");
  }
}

BBox weak_box(int image_w, int image_h, double lambda) {
  if (image_w < 1 || image_h < 1) throw SpecInvalid("frame sides must be >= 1");
  if (!(lambda > 0.0) || lambda > 1.0) throw SpecInvalid("lambda must lie in (0, 1]");
  int x = int(std::floor((1.0 - lambda) * image_w / 2.0));
  int y = int(std::floor((1.0 - lambda) * image_h / 2.0));
  int w = std::max(1, int(std::lround(lambda * image_w)));
  int h = std::max(1, int(std::lround(lambda * image_h)));
  if (x + w > image_w) x = image_w - w;
  if (y + h > image_h) y = image_h - h;
  return BBox{x, y, w, h};
}

std::vector<SupervisionItem> build_supervision(const DatasetManifest& dataset, double lambda) {
  if (dataset.records.empty()) throw EmptyDataset("no records to supervise");
  std::vector<SupervisionItem> items;
  items.reserve(dataset.records.size());
  for (const auto& rec : dataset.records) {
    if (rec.source != Source::standard) {
      throw SpecInvalid("supervision requires standard-source records, got " +
                        to_string(rec.source) + " for " + rec.id);
    }
    items.push_back(SupervisionItem{rec.id, weak_box(rec.width, rec.height, lambda), rec.label});
  }
  return items;
}

void save_supervision(const std::vector<SupervisionItem>& items, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw MalformedFile("cannot open for write: " + path);
  for (const auto& it : items) {
    json j = {{"image_id", it.image_id},
              {"box", {it.box.x, it.box.y, it.box.w, it.box.h}},
              {"label", it.label}};
    f << j.dump() << "\n";
  }
}

std::vector<SupervisionItem> load_supervision(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw MalformedFile("cannot open: " + path);
  std::vector<SupervisionItem> items;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      json j = json::parse(line);
      const auto& b = j.at("box");
      items.push_back(SupervisionItem{
          j.at("image_id").get<std::string>(),
          BBox{b.at(0).get<int>(), b.at(1).get<int>(), b.at(2).get<int>(), b.at(3).get<int>()},
          j.at("label").get<int>()});
    } catch (const json::exception& e) {
      throw MalformedFile(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return items;
}

}  // namespace debiaskit
