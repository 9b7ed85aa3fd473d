#include "debiaskit/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "debiaskit/errors.hpp"

namespace debiaskit {

long long intersection_area(const BBox& a, const BBox& b) {
  int ix = std::max(a.x, b.x);
  int iy = std::max(a.y, b.y);
  int ix2 = std::min(a.x2(), b.x2());
  int iy2 = std::min(a.y2(), b.y2());
  if (ix2 <= ix || iy2 <= iy) return 0;
  return (long long)(ix2 - ix) * (long long)(iy2 - iy);
}

std::optional<BBox> intersect_box(const BBox& a, const BBox& b) {
  int ix = std::max(a.x, b.x);
  int iy = std::max(a.y, b.y);
  int ix2 = std::min(a.x2(), b.x2());
  int iy2 = std::min(a.y2(), b.y2());
  if (ix2 <= ix || iy2 <= iy) return std::nullopt;
  return BBox{ix, iy, ix2 - ix, iy2 - iy};
}

double iou(const BBox& a, const BBox& b) {
  long long inter = intersection_area(a, b);
  long long uni = a.area() + b.area() - inter;
  return double(inter) / double(uni);
}

std::vector<Region> nms(const std::vector<Region>& regions, double overlap_threshold) {
  std::vector<std::size_t> order(regions.size());
  std::iota(order.begin(), order.end(), std::size_t(0));
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const Region& ra = regions[a];
    const Region& rb = regions[b];
    if (ra.objectness != rb.objectness) return ra.objectness > rb.objectness;
    if (ra.box.x != rb.box.x) return ra.box.x < rb.box.x;
    if (ra.box.y != rb.box.y) return ra.box.y < rb.box.y;
    return a < b;
  });

  std::vector<Region> kept;
  std::vector<bool> dead(regions.size(), false);
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (dead[order[i]]) continue;
    const Region& top = regions[order[i]];
    kept.push_back(top);
    for (std::size_t j = i + 1; j < order.size(); ++j) {
      if (dead[order[j]]) continue;
      if (iou(top.box, regions[order[j]].box) >= overlap_threshold) dead[order[j]] = true;
    }
  }
  return kept;
}

BBox clamp_box(const BBox& box, int image_w, int image_h) {
  int nx = std::max(box.x, 0);
  int ny = std::max(box.y, 0);
  int nx2 = std::min(box.x2(), image_w);
  int ny2 = std::min(box.y2(), image_h);
  if (nx2 <= nx || ny2 <= ny) {
    throw OutOfFrame("box (" + std::to_string(box.x) + "," + std::to_string(box.y) + "," +
                     std::to_string(box.w) + "," + std::to_string(box.h) +
                     ") lies outside a " + std::to_string(image_w) + "x" +
                     std::to_string(image_h) + " frame");
  }
  return BBox{nx, ny, nx2 - nx, ny2 - ny};
}

namespace {
int floordiv2(int v) { return v >= 0 ? v / 2 : -((-v + 1) / 2); }
}  // namespace

BBox dilate_box(const BBox& box, double factor) {
  int nw = std::max(1, int(std::lround(double(box.w) * factor)));
  int nh = std::max(1, int(std::lround(double(box.h) * factor)));
  int nx = box.x + floordiv2(box.w - nw);
  int ny = box.y + floordiv2(box.h - nh);
  return BBox{nx, ny, nw, nh};
}

}  // namespace debiaskit
