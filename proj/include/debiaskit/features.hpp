#pragma once

#include <array>

#include "debiaskit/image.hpp"

namespace debiaskit {

// 72-d handcrafted descriptor: a 4x4x4 RGB histogram (64 bins, L1-normalized
// so the block sums to one) followed by 8 shape moments of the high-chroma
// mask. Every pixel lands in a histogram bin, so the split between content
// hues and the background bin encodes how much of the view the content
// fills. The histogram block is exactly invariant to uniform rescaling; the
// moments are invariant up to discretization.
inline constexpr int kHistogramBins = 64;
inline constexpr int kMomentCount = 8;
inline constexpr int kFeatureDim = kHistogramBins + kMomentCount;

// Pixels whose chroma (max channel - min channel) exceeds this belong to the
// shape mask. Background texture stays far below it by construction.
inline constexpr int kMaskChromaThreshold = 100;

struct FeatureVector {
  std::array<double, kFeatureDim> values{};
  double& operator[](int i) { return values[std::size_t(i)]; }
  double operator[](int i) const { return values[std::size_t(i)]; }
  bool operator==(const FeatureVector&) const = default;
};

FeatureVector extract_features(const ImageRaster& image);

double dot(const FeatureVector& a, const FeatureVector& b);
double norm(const FeatureVector& a);
double cosine(const FeatureVector& a, const FeatureVector& b);  // 0 if a norm is 0

}  // namespace debiaskit
