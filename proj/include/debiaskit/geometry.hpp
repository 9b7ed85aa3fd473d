#pragma once

#include <optional>
#include <string>
#include <vector>

namespace debiaskit {

// Axis-aligned box in integer pixel coordinates. (x, y) is the top-left
// corner, w and h are at least 1 for any box produced by this library.
struct BBox {
  int x = 0;
  int y = 0;
  int w = 1;
  int h = 1;

  long long area() const { return (long long)(w) * (long long)(h); }
  int x2() const { return x + w; }
  int y2() const { return y + h; }
  bool contains(const BBox& inner) const {
    return inner.x >= x && inner.y >= y && inner.x2() <= x2() && inner.y2() <= y2();
  }
  bool operator==(const BBox&) const = default;
};

// A scored proposal. class_probs stays empty until a classifier fills it in.
struct Region {
  BBox box;
  double objectness = 0.0;
  std::optional<std::vector<double>> class_probs;
  std::string source_image;
};

// Intersection area in pixels; 0 when disjoint.
long long intersection_area(const BBox& a, const BBox& b);

// The overlapping box, or nullopt when the two are disjoint.
std::optional<BBox> intersect_box(const BBox& a, const BBox& b);

// Intersection over union on integer pixel areas, one division at the end.
double iou(const BBox& a, const BBox& b);

// Greedy non-maximum suppression. Keeps the highest-objectness region and
// deletes every remaining region with iou >= overlap_threshold against it,
// repeating until the pool is empty. Ties are broken by lower box.x, then
// box.y, then input index, so the result is deterministic. Note a threshold
// of 0 keeps only the single top region (disjoint boxes have iou 0 >= 0).
std::vector<Region> nms(const std::vector<Region>& regions, double overlap_threshold);

// Clips a box to an image frame. Throws OutOfFrame when nothing remains.
BBox clamp_box(const BBox& box, int image_w, int image_h);

// Scales a box about its center. Sizes are rounded, minimum 1; the result is
// not clamped to any frame.
BBox dilate_box(const BBox& box, double factor);

}  // namespace debiaskit
