#pragma once

#include <string>
#include <vector>

#include "debiaskit/geometry.hpp"
#include "debiaskit/manifest.hpp"

namespace debiaskit {

// The two shrink factors used across the pipeline: lambda_r sizes region
// proposals, lambda_o sizes object proposals. Must satisfy 0 < o < r <= 1.
struct WeakBoxConfig {
  double lambda_r = 0.9;
  double lambda_o = 0.8;
};

void validate_weakbox(const WeakBoxConfig& cfg);  // throws SpecInvalid

// Centered pseudo box for a w x h frame: top-left ((1-lambda)w/2,
// (1-lambda)h/2) floored, size (lambda*w, lambda*h) rounded, minimum 1.
BBox weak_box(int image_w, int image_h, double lambda);

struct SupervisionItem {
  std::string image_id;
  BBox box;
  int label = 0;
  bool operator==(const SupervisionItem&) const = default;
};

// One weak box per standard image. Throws EmptyDataset on an empty
// manifest and SpecInvalid if a record is not standard-source.
std::vector<SupervisionItem> build_supervision(const DatasetManifest& dataset, double lambda);

void save_supervision(const std::vector<SupervisionItem>& items, const std::string& path);
std::vector<SupervisionItem> load_supervision(const std::string& path);

}  // namespace debiaskit
