#include "debiaskit/features.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "debiaskit/errors.hpp"

namespace debiaskit {

FeatureVector extract_features(const ImageRaster& image) {
  if (image.width < 1 || image.height < 1 || image.rgb.empty()) {
    throw DimensionMismatch("cannot extract features from an empty raster");
  }
  FeatureVector f;
  const int w = image.width;
  const int h = image.height;
  const double n_px = double(w) * double(h);

  // One sweep collects the color histogram and the mask geometry the moment
  // block is built from.
  std::vector<std::uint8_t> mask(std::size_t(w) * std::size_t(h), 0);
  long long mask_count = 0;
  double sum_x = 0, sum_y = 0;
  int min_x = w, min_y = h, max_x = -1, max_y = -1;

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::uint8_t* p = image.px(x, y);
      int bin = (p[0] / 64) * 16 + (p[1] / 64) * 4 + (p[2] / 64);
      f[bin] += 1.0;
      int chroma = int(std::max({p[0], p[1], p[2]})) - int(std::min({p[0], p[1], p[2]}));
      if (chroma > kMaskChromaThreshold) {
        mask[std::size_t(y) * std::size_t(w) + std::size_t(x)] = 1;
        ++mask_count;
        sum_x += (x + 0.5) / w;
        sum_y += (y + 0.5) / h;
        min_x = std::min(min_x, x);
        min_y = std::min(min_y, y);
        max_x = std::max(max_x, x);
        max_y = std::max(max_y, y);
      }
    }
  }
  for (int b = 0; b < kHistogramBins; ++b) f[b] /= n_px;

  double* m = f.values.data() + kHistogramBins;
  if (mask_count > 0) {
    double cx = sum_x / double(mask_count);
    double cy = sum_y / double(mask_count);
    double vxx = 0, vyy = 0, vxy = 0;
    long long boundary = 0;
    auto in_mask = [&](int x, int y) {
      return x >= 0 && y >= 0 && x < w && y < h &&
             mask[std::size_t(y) * std::size_t(w) + std::size_t(x)] != 0;
    };
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (!in_mask(x, y)) continue;
        double dx = (x + 0.5) / w - cx;
        double dy = (y + 0.5) / h - cy;
        vxx += dx * dx;
        vyy += dy * dy;
        vxy += dx * dy;
        if (!in_mask(x - 1, y) || !in_mask(x + 1, y) || !in_mask(x, y - 1) ||
            !in_mask(x, y + 1)) {
          ++boundary;
        }
      }
    }

    int bw = max_x - min_x + 1;
    int bh = max_y - min_y + 1;
    m[0] = double(mask_count) / n_px;            // normalized mask area
    m[1] = cx - 0.5;                             // centroid offset from center
    m[2] = cy - 0.5;
    m[3] = vxx / double(mask_count);             // second moments about the centroid
    m[4] = vyy / double(mask_count);
    m[5] = vxy / double(mask_count);
    m[6] = double(boundary) / (2.0 * (w + h));   // edge density
    m[7] = double(bw) / double(bw + bh);         // mask bounding-box aspect
  }
  // empty mask leaves the whole moment block at zero

  return f;
}

double dot(const FeatureVector& a, const FeatureVector& b) {
  double s = 0;
  for (int i = 0; i < kFeatureDim; ++i) s += a[i] * b[i];
  return s;
}

double norm(const FeatureVector& a) { return std::sqrt(dot(a, a)); }

double cosine(const FeatureVector& a, const FeatureVector& b) {
  double na = norm(a);
  double nb = norm(b);
  if (na <= 0.0 || nb <= 0.0) return 0.0;
  return dot(a, b) / (na * nb);
}

}  // namespace debiaskit
