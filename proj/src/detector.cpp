#include "debiaskit/detector.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <tuple>

#include <json.hpp>

#include "debiaskit/errors.hpp"
#include "debiaskit/image.hpp"
#include "debiaskit/rng.hpp"

namespace debiaskit {

using nlohmann::json;

std::string to_string(DetectorKind k) {
  switch (k) {
    case DetectorKind::oracle: return "oracle";
    case DetectorKind::template_match: return "template";
    case DetectorKind::external: return "external";
  }
  return "template";
}

DetectorKind detector_kind_from_string(const std::string& s) {
  if (s == "oracle") return DetectorKind::oracle;
  if (s == "template") return DetectorKind::template_match;
  if (s == "external") return DetectorKind::external;
  throw ConfigError("unknown detector kind: " + s);
}

namespace {

constexpr double kWindowScales[] = {0.3, 0.45, 0.6, 0.8, 0.95};

// A view whose content fraction reaches this is interior to an object: it
// shows no extent at all, so it cannot serve as a region proposal.
constexpr double kInteriorViewFill = 0.95;

// A region proposal's dominant piece must stretch across at least this much
// of the view on both axes. Consecutive pyramid scales are no more than 1.6x
// apart, so every object that fits under the largest window still has a
// window it fills this well; what the rule removes is oversized windows
// staring at something much smaller than themselves.
constexpr double kMinContentSpan = 0.6;

double window_objectness(const DetectorModel& model, const FeatureVector& f) {
  double best = -1.0;
  for (const auto& t : model.templates) best = std::max(best, cosine(f, t));
  return (1.0 + best) / 2.0;
}

// Oracle proposals: each in-vocabulary planted box grown to the pre-shrink
// extent the detector was nominally trained at, with optional coordinate
// jitter and score noise. Deterministic per (model seed, image id).
std::vector<Region> oracle_candidates(const DetectorModel& model, const ImageRecord& record) {
  Rng rng(mix_seed(model.seed, fnv1a64(record.id)));
  std::vector<Region> out;
  for (const auto& p : record.planted) {
    BBox grown = clamp_box(dilate_box(p.box, 1.0 / model.lambda_used), record.width,
                           record.height);
    if (model.oracle_jitter_px > 0) {
      int j = model.oracle_jitter_px;
      grown.x += rng.uniform_int(-j, j);
      grown.y += rng.uniform_int(-j, j);
      grown.w = std::max(1, grown.w + rng.uniform_int(-j, j));
      grown.h = std::max(1, grown.h + rng.uniform_int(-j, j));
      grown = clamp_box(grown, record.width, record.height);
    }
    double objectness = 1.0 - rng.next_double() * model.oracle_score_noise;
    Region r;
    r.box = grown;
    r.objectness = objectness;
    r.source_image = record.id;
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<Region> external_candidates(const DetectorModel& model, const ImageRecord& record) {
  if (!model.predictions) throw NoModel("external detector has no prediction file");
  auto it = model.predictions->by_image.find(record.id);
  if (it == model.predictions->by_image.end()) {
    throw MissingPrediction("no stored proposals for image id: " + record.id);
  }
  std::vector<Region> out;
  for (const auto& det : it->second) {
    Region r;
    r.box = clamp_box(det.box, record.width, record.height);
    r.objectness = det.objectness;
    r.class_probs = det.class_probs;
    r.source_image = record.id;
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<Region> template_candidates(const DetectorModel& model, const ImageRecord& record,
                                        const ImageRaster& image,
                                        const WindowFeatureCache* cache) {
  WindowFeatureCache local;
  if (cache == nullptr) {
    local = compute_window_features(image);
    cache = &local;
  }
  std::vector<Region> out;
  std::set<std::tuple<int, int, int, int>> seen;
  for (const WindowEntry& e : cache->entries) {
    if (e.content <= 0.0 || e.content >= kInteriorViewFill || e.fragment) continue;
    if (e.span < kMinContentSpan) continue;
    if (!seen.insert({e.box.x, e.box.y, e.box.w, e.box.h}).second) continue;
    Region r;
    r.box = e.box;
    r.objectness = window_objectness(model, e.feature);
    r.source_image = record.id;
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<Region> finish(std::vector<Region> candidates, double score_floor,
                           const DetectParams& params) {
  std::erase_if(candidates, [&](const Region& r) { return r.objectness < score_floor; });
  std::vector<Region> kept = nms(candidates, params.nms_threshold);
  if (int(kept.size()) > params.max_regions) kept.resize(std::size_t(params.max_regions));
  return kept;
}

}  // namespace

std::vector<BBox> sliding_windows(int image_w, int image_h) {
  int short_side = std::min(image_w, image_h);
  std::vector<BBox> out;
  for (double scale : kWindowScales) {
    int side = std::max(1, int(std::lround(scale * short_side)));
    if (side > image_w || side > image_h) continue;
    int stride = std::max(1, side / 4);
    for (int y = 0; y + side <= image_h; y += stride) {
      for (int x = 0; x + side <= image_w; x += stride) {
        out.push_back(BBox{x, y, side, side});
      }
    }
  }
  return out;
}

namespace {

// Chroma-mask summary of one view. Windows often see several pieces of
// content at once (the object of interest plus slivers of its neighbors), so
// alongside the total count the scan tracks the largest 4-connected
// component: geometric judgments about the view key on that dominant piece,
// never on stray slivers.
struct MaskScan {
  long long count = 0;          // all mask pixels in the view
  long long dominant = 0;       // pixels in the largest connected component
  int min_x = 0, min_y = 0, max_x = -1, max_y = -1;  // dominant-piece bounds
};

MaskScan scan_mask(const ImageRaster& image, const BBox& b) {
  MaskScan s;
  s.min_x = b.x2();
  s.min_y = b.y2();
  s.max_x = b.x - 1;
  s.max_y = b.y - 1;
  std::vector<std::uint8_t> grid(std::size_t(b.w) * std::size_t(b.h), 0);
  for (int y = b.y; y < b.y2(); ++y) {
    for (int x = b.x; x < b.x2(); ++x) {
      const std::uint8_t* p = image.px(x, y);
      int chroma = int(std::max({p[0], p[1], p[2]})) - int(std::min({p[0], p[1], p[2]}));
      if (chroma <= kMaskChromaThreshold) continue;
      ++s.count;
      grid[std::size_t(y - b.y) * std::size_t(b.w) + std::size_t(x - b.x)] = 1;
    }
  }
  if (s.count == 0) return s;

  std::vector<std::pair<int, int>> stack;
  for (int y0 = 0; y0 < b.h; ++y0) {
    for (int x0 = 0; x0 < b.w; ++x0) {
      if (grid[std::size_t(y0) * std::size_t(b.w) + std::size_t(x0)] != 1) continue;
      long long size = 0;
      int cmin_x = x0, cmin_y = y0, cmax_x = x0, cmax_y = y0;
      grid[std::size_t(y0) * std::size_t(b.w) + std::size_t(x0)] = 2;
      stack.push_back({x0, y0});
      while (!stack.empty()) {
        auto [x, y] = stack.back();
        stack.pop_back();
        ++size;
        cmin_x = std::min(cmin_x, x);
        cmin_y = std::min(cmin_y, y);
        cmax_x = std::max(cmax_x, x);
        cmax_y = std::max(cmax_y, y);
        const int nx[4] = {x - 1, x + 1, x, x};
        const int ny[4] = {y, y, y - 1, y + 1};
        for (int k = 0; k < 4; ++k) {
          if (nx[k] < 0 || ny[k] < 0 || nx[k] >= b.w || ny[k] >= b.h) continue;
          std::uint8_t& cell = grid[std::size_t(ny[k]) * std::size_t(b.w) + std::size_t(nx[k])];
          if (cell != 1) continue;
          cell = 2;
          stack.push_back({nx[k], ny[k]});
        }
      }
      if (size > s.dominant) {
        s.dominant = size;
        s.min_x = b.x + cmin_x;
        s.min_y = b.y + cmin_y;
        s.max_x = b.x + cmax_x;
        s.max_y = b.y + cmax_y;
      }
    }
  }
  return s;
}

}  // namespace

WindowFeatureCache compute_window_features(const ImageRaster& image) {
  WindowFeatureCache cache;
  std::map<std::tuple<int, int, int, int>, FeatureVector> memo;
  for (const BBox& w : sliding_windows(image.width, image.height)) {
    WindowEntry e;
    e.window = w;

    MaskScan raw = scan_mask(image, w);
    if (raw.count == 0) {
      e.box = w;
      cache.entries.push_back(std::move(e));
      continue;
    }

    // Slide the window onto the dominant piece's center, same size, kept in
    // frame.
    double cx = (raw.min_x + raw.max_x + 1) / 2.0;
    double cy = (raw.min_y + raw.max_y + 1) / 2.0;
    BBox b{int(std::lround(cx - w.w / 2.0)), int(std::lround(cy - w.h / 2.0)), w.w, w.h};
    b.x = std::clamp(b.x, 0, image.width - b.w);
    b.y = std::clamp(b.y, 0, image.height - b.h);
    e.box = b;

    // Content, fragment-ness and span belong to the localized view, not the
    // raw window, and the last two are judged on the dominant piece alone: a
    // whole object centered in the view keeps a margin on every side, while
    // a piece of something larger still presses against an edge the frame
    // continues past. Stray slivers of neighboring objects touch edges too,
    // but they never define the view.
    MaskScan ref = scan_mask(image, b);
    e.content = double(ref.count) / (double(b.w) * double(b.h));
    if (ref.count > 0) {
      e.fragment = (ref.min_x == b.x && b.x > 0) ||
                   (ref.min_y == b.y && b.y > 0) ||
                   (ref.max_x == b.x2() - 1 && b.x2() < image.width) ||
                   (ref.max_y == b.y2() - 1 && b.y2() < image.height);
      e.span = std::min(double(ref.max_x - ref.min_x + 1) / double(b.w),
                        double(ref.max_y - ref.min_y + 1) / double(b.h));
    }

    auto key = std::make_tuple(b.x, b.y, b.w, b.h);
    auto it = memo.find(key);
    if (it == memo.end()) {
      it = memo.emplace(key, extract_features(crop(image, b))).first;
    }
    e.feature = it->second;
    cache.entries.push_back(std::move(e));
  }
  return cache;
}

DetectorModel train_template_detector(const std::vector<SupervisionItem>& supervision,
                                      const RasterStore& rasters, double lambda,
                                      double score_floor) {
  if (supervision.empty()) throw EmptyDataset("no supervision items");
  std::vector<std::size_t> order(supervision.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return supervision[a].image_id < supervision[b].image_id;
  });

  int class_count = 0;
  for (const auto& it : supervision) class_count = std::max(class_count, it.label + 1);

  std::vector<FeatureVector> sums(std::size_t(class_count), FeatureVector{});
  std::vector<int> counts(std::size_t(class_count), 0);
  for (std::size_t idx : order) {
    const SupervisionItem& item = supervision[idx];
    if (item.label < 0) throw MissingClass("negative label in supervision");
    FeatureVector f = extract_features(crop(rasters.get(item.image_id), item.box));
    FeatureVector& s = sums[std::size_t(item.label)];
    for (int i = 0; i < kFeatureDim; ++i) s[i] += f[i];
    ++counts[std::size_t(item.label)];
  }

  DetectorModel model;
  model.kind = DetectorKind::template_match;
  model.lambda_used = lambda;
  model.score_floor = score_floor;
  model.class_count = class_count;
  for (int c = 0; c < class_count; ++c) {
    if (counts[std::size_t(c)] == 0) {
      throw MissingClass("no supervision for class " + std::to_string(c));
    }
    FeatureVector mean = sums[std::size_t(c)];
    for (int i = 0; i < kFeatureDim; ++i) mean[i] /= double(counts[std::size_t(c)]);
    double n = norm(mean);
    if (n > 0) {
      for (int i = 0; i < kFeatureDim; ++i) mean[i] /= n;
    }
    model.templates.push_back(mean);
  }
  return model;
}

DetectorModel make_oracle_detector(double lambda, int jitter_px, double score_noise,
                                   std::uint64_t seed) {
  if (!(lambda > 0.0) || lambda > 1.0) throw SpecInvalid("lambda must lie in (0, 1]");
  DetectorModel model;
  model.kind = DetectorKind::oracle;
  model.lambda_used = lambda;
  model.score_floor = 0.0;
  model.oracle_jitter_px = jitter_px;
  model.oracle_score_noise = score_noise;
  model.seed = seed;
  return model;
}

DetectorModel make_external_detector(PredictionFile predictions, double lambda) {
  DetectorModel model;
  model.kind = DetectorKind::external;
  model.lambda_used = lambda;
  model.score_floor = 0.0;
  model.predictions = std::move(predictions);
  return model;
}

std::vector<Region> detect_regions(const DetectorModel& model, const ImageRecord& record,
                                   const ImageRaster& image, const DetectParams& params) {
  return detect_regions(model, record, image, params, nullptr);
}

std::vector<Region> detect_regions(const DetectorModel& model, const ImageRecord& record,
                                   const ImageRaster& image, const DetectParams& params,
                                   const WindowFeatureCache* cache) {
  std::vector<Region> candidates;
  switch (model.kind) {
    case DetectorKind::oracle: candidates = oracle_candidates(model, record); break;
    case DetectorKind::external: candidates = external_candidates(model, record); break;
    case DetectorKind::template_match:
      candidates = template_candidates(model, record, image, cache);
      break;
  }
  return finish(std::move(candidates), model.score_floor, params);
}

std::optional<Region> detect_best_object_within(const DetectorModel& model,
                                                const ImageRecord& record,
                                                const ImageRaster& image, const Region& region) {
  return detect_best_object_within(model, record, image, region, nullptr);
}

std::optional<Region> detect_best_object_within(const DetectorModel& model,
                                                const ImageRecord& record,
                                                const ImageRaster& image, const Region& region,
                                                const WindowFeatureCache* cache) {
  std::vector<Region> candidates;
  switch (model.kind) {
    case DetectorKind::oracle: {
      // The grown planted boxes, cut down to the region so the result never
      // leaves it.
      for (Region& r : oracle_candidates(model, record)) {
        auto cut = intersect_box(r.box, region.box);
        if (!cut) continue;
        r.box = *cut;
        candidates.push_back(std::move(r));
      }
      break;
    }
    case DetectorKind::external: {
      for (Region& r : external_candidates(model, record)) {
        if (region.box.contains(r.box)) candidates.push_back(std::move(r));
      }
      break;
    }
    case DetectorKind::template_match: {
      // The image-wide pyramid is far too coarse inside a single region: its
      // grid almost never drops a window of the right size at the right spot
      // within an arbitrary box. The object search therefore scans its own
      // windows, sized relative to the region the way the pyramid sizes
      // windows relative to the frame. Each window is then tightened to the
      // bounding box of the dominant connected piece it saw, so the reported
      // box follows the content's actual extent instead of the scanning
      // grid. Windows whose dominant piece spans less than kMinContentSpan
      // of the view are dropped; they see a corner sliver of a neighboring
      // object, and a sliver crop is solid content that can outscore the
      // real object under a template that mostly measures hue.
      (void)cache;
      static constexpr double kRegionScales[] = {0.6, 0.75, 0.9, 1.0};
      std::set<std::tuple<int, int, int, int>> seen;
      int short_side = std::min(region.box.w, region.box.h);
      for (double scale : kRegionScales) {
        int side = std::max(1, int(std::lround(scale * short_side)));
        if (side > region.box.w || side > region.box.h) continue;
        int stride = std::max(1, side / 4);
        for (int y = region.box.y; y + side <= region.box.y2(); y += stride) {
          for (int x = region.box.x; x + side <= region.box.x2(); x += stride) {
            MaskScan raw = scan_mask(image, BBox{x, y, side, side});
            if (raw.count == 0) continue;
            BBox b{raw.min_x, raw.min_y, raw.max_x - raw.min_x + 1,
                   raw.max_y - raw.min_y + 1};
            if (std::min(b.w, b.h) < kMinContentSpan * side) continue;
            if (!seen.insert({b.x, b.y, b.w, b.h}).second) continue;
            Region r;
            r.box = b;
            r.objectness = window_objectness(model, extract_features(crop(image, b)));
            r.source_image = record.id;
            candidates.push_back(std::move(r));
          }
        }
      }
      // Larger boxes first, so an exact score tie between a full object and
      // a clipped view of it resolves to the full object.
      std::stable_sort(candidates.begin(), candidates.end(),
                       [](const Region& a, const Region& b) {
                         return a.box.w * a.box.h > b.box.w * b.box.h;
                       });
      break;
    }
  }
  const Region* best = nullptr;
  for (const Region& r : candidates) {
    if (r.objectness < model.score_floor) continue;
    if (best == nullptr || r.objectness > best->objectness) best = &r;
  }
  if (best == nullptr) return std::nullopt;
  return *best;
}

PredictionFile load_predictions(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw MalformedFile("cannot open: " + path);
  PredictionFile out;
  std::string line;
  std::size_t line_no = 0;
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
      std::string id = j.at("image_id").get<std::string>();
      if (out.by_image.count(id)) throw MalformedFile(where + "duplicate image_id " + id);
      std::vector<Detection> dets;
      for (const auto& d : j.at("detections")) {
        Detection det;
        const auto& b = d.at("box");
        if (!b.is_array() || b.size() != 4) throw MalformedFile(where + "box must be [x,y,w,h]");
        det.box = BBox{b[0].get<int>(), b[1].get<int>(), b[2].get<int>(), b[3].get<int>()};
        if (det.box.w < 1 || det.box.h < 1) {
          throw MalformedFile(where + "box sides must be >= 1");
        }
        det.objectness = d.at("objectness").get<double>();
        if (!(det.objectness >= 0.0 && det.objectness <= 1.0)) {
          throw MalformedFile(where + "objectness " + std::to_string(det.objectness) +
                              " outside [0, 1]");
        }
        if (d.contains("class_probs")) {
          auto probs = d.at("class_probs").get<std::vector<double>>();
          double sum = 0;
          for (double p : probs) {
            if (p < 0.0) throw MalformedFile(where + "negative class probability");
            sum += p;
          }
          if (std::fabs(sum - 1.0) > 1e-6) {
            throw MalformedFile(where + "class_probs sum to " + std::to_string(sum));
          }
          det.class_probs = std::move(probs);
        }
        dets.push_back(std::move(det));
      }
      out.by_image.emplace(std::move(id), std::move(dets));
    } catch (const json::exception& e) {
      throw MalformedFile(where + e.what());
    }
  }
  return out;
}

void export_predictions(const PredictionFile& predictions, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw MalformedFile("cannot open for write: " + path);
  for (const auto& [id, dets] : predictions.by_image) {
    json arr = json::array();
    for (const auto& d : dets) {
      json jd = {{"box", {d.box.x, d.box.y, d.box.w, d.box.h}},
                 {"objectness", d.objectness}};
      if (d.class_probs) jd["class_probs"] = *d.class_probs;
      arr.push_back(std::move(jd));
    }
    f << json{{"image_id", id}, {"detections", arr}}.dump() << "\n";
  }
}

void save_detector(const DetectorModel& model, const std::string& path) {
  json templates = json::array();
  for (const auto& t : model.templates) {
    templates.push_back(std::vector<double>(t.values.begin(), t.values.end()));
  }
  json j = {{"kind", to_string(model.kind)},
            {"lambda_used", model.lambda_used},
            {"score_floor", model.score_floor},
            {"class_count", model.class_count},
            {"feature_dim", kFeatureDim},
            {"templates", templates},
            {"oracle_jitter_px", model.oracle_jitter_px},
            {"oracle_score_noise", model.oracle_score_noise},
            {"seed", model.seed}};
  std::ofstream f(path, std::ios::binary);
  if (!f) throw MalformedFile("cannot open for write: " + path);
  f << j.dump(2) << "\n";
}

DetectorModel load_detector(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw MalformedFile("cannot open: " + path);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw MalformedFile(path + ": " + e.what());
  }
  DetectorModel model;
  try {
    model.kind = detector_kind_from_string(j.at("kind").get<std::string>());
    model.lambda_used = j.at("lambda_used").get<double>();
    model.score_floor = j.at("score_floor").get<double>();
    model.class_count = j.at("class_count").get<int>();
    if (j.at("feature_dim").get<int>() != kFeatureDim) {
      throw MalformedFile(path + ": unexpected feature_dim");
    }
    for (const auto& t : j.at("templates")) {
      auto vec = t.get<std::vector<double>>();
      if (int(vec.size()) != kFeatureDim) throw MalformedFile(path + ": bad template length");
      FeatureVector fv;
      std::copy(vec.begin(), vec.end(), fv.values.begin());
      model.templates.push_back(fv);
    }
    model.oracle_jitter_px = j.at("oracle_jitter_px").get<int>();
    model.oracle_score_noise = j.at("oracle_score_noise").get<double>();
    model.seed = j.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw MalformedFile(path + ": " + e.what());
  }
  return model;
}

}  // namespace debiaskit
