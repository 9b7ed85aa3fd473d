#include "debiaskit/biasmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "debiaskit/debias.hpp"
#include "debiaskit/errors.hpp"
#include "debiaskit/parallel.hpp"
#include "debiaskit/rng.hpp"
#include "debiaskit/weaksup.hpp"

namespace debiaskit {

ImageScaleDensity image_scale_density(const std::vector<BBox>& boxes, int image_w, int image_h) {
  if (image_w < 1 || image_h < 1) throw SpecInvalid("frame sides must be >= 1");
  ImageScaleDensity out;
  out.density = int(boxes.size());
  if (boxes.empty()) return out;
  double frame = double(image_w) * double(image_h);
  double sum = 0.0;
  for (const BBox& b : boxes) sum += double(b.area()) / frame;
  out.scale = sum / double(boxes.size());
  return out;
}

ScaleDensityStats dataset_scale_density(const DatasetManifest& m, const RasterStore& rasters,
                                        const DetectorModel& detector,
                                        const ClassifierModel* label_filter,
                                        const DetectParams& params, int jobs) {
  if (m.records.empty()) throw EmptyDataset("no records to measure");
  std::vector<ImageScaleDensity> per_image(m.records.size());
  parallel_for(jobs, m.records.size(), [&](std::size_t i) {
    const ImageRecord& rec = m.records[i];
    const ImageRaster& img = rasters.get(rec.id);
    std::vector<Region> regions = detect_regions(detector, rec, img, params);
    std::vector<BBox> boxes;
    for (const Region& r : regions) {
      if (label_filter != nullptr) {
        FeatureVector f = extract_features(crop(img, r.box));
        if (predict_class(*label_filter, f) != rec.label) continue;
      }
      boxes.push_back(r.box);
    }
    per_image[i] = image_scale_density(boxes, rec.width, rec.height);
  });

  ScaleDensityStats stats;
  stats.images = int(m.records.size());
  double scale_sum = 0.0;
  double density_sum = 0.0;
  for (const auto& isd : per_image) {
    density_sum += double(isd.density);
    if (isd.density > 0) {
      scale_sum += isd.scale;
      ++stats.images_with_detections;
    }
  }
  stats.mean_density = density_sum / double(stats.images);
  if (stats.images_with_detections > 0) {
    stats.mean_scale = scale_sum / double(stats.images_with_detections);
  }
  return stats;
}

std::vector<FeatureVector> dataset_features(const DatasetManifest& m, const RasterStore& rasters,
                                            int jobs) {
  std::vector<FeatureVector> out(m.records.size());
  parallel_for(jobs, m.records.size(), [&](std::size_t i) {
    out[i] = extract_features(rasters.get(m.records[i].id));
  });
  return out;
}

std::vector<FeatureVector> subsample(const std::vector<FeatureVector>& xs, std::size_t n,
                                     std::uint64_t seed) {
  if (n >= xs.size()) return xs;
  std::vector<std::size_t> idx(xs.size());
  std::iota(idx.begin(), idx.end(), std::size_t(0));
  Rng(seed).shuffle(idx);
  idx.resize(n);
  std::sort(idx.begin(), idx.end());
  std::vector<FeatureVector> out;
  out.reserve(n);
  for (std::size_t i : idx) out.push_back(xs[i]);
  return out;
}

namespace {

// Accuracy estimates from a single split are too jumpy to compare against
// narrow bands, so every reported point is the mean over this many
// independent split-and-train passes.
constexpr int kProbeRepeats = 16;

// One probe pass: reserve a 25% test split per side, then train on nested
// subsets of the remaining pool, one model per fraction.
std::vector<double> probe_pass(const std::vector<FeatureVector>& a,
                               const std::vector<FeatureVector>& b,
                               const std::vector<double>& fractions, const TrainConfig& config,
                               std::uint64_t salt) {
  std::size_t n = a.size();
  std::size_t test_n = std::max<std::size_t>(1, n / 4);
  if (n <= test_n) throw DegenerateData("too few images for a train/test split");
  std::size_t pool_n = n - test_n;

  std::vector<std::size_t> pa(n), pb(n);
  std::iota(pa.begin(), pa.end(), std::size_t(0));
  std::iota(pb.begin(), pb.end(), std::size_t(0));
  Rng(mix_seed(config.seed, salt)).shuffle(pa);
  Rng(mix_seed(config.seed, salt ^ 0x5eedULL)).shuffle(pb);

  std::vector<Example> test;
  for (std::size_t i = 0; i < test_n; ++i) {
    test.emplace_back(a[pa[i]], 0);
    test.emplace_back(b[pb[i]], 1);
  }

  std::vector<double> accuracy;
  for (double f : fractions) {
    std::size_t take = std::size_t(std::lround(f * double(pool_n)));
    take = std::clamp<std::size_t>(take, 1, pool_n);
    std::vector<Example> train;
    for (std::size_t i = 0; i < take; ++i) {
      train.emplace_back(a[pa[test_n + i]], 0);
      train.emplace_back(b[pb[test_n + i]], 1);
    }
    ClassifierModel model = train_softmax(train, 2, config);
    accuracy.push_back(evaluate_examples(model, test));
  }
  return accuracy;
}

// Repeat-averaged curve; each pass draws its own splits off the salt.
std::vector<double> probe_curve(const std::vector<FeatureVector>& a,
                                const std::vector<FeatureVector>& b,
                                const std::vector<double>& fractions, const TrainConfig& config,
                                std::uint64_t salt) {
  std::vector<double> mean(fractions.size(), 0.0);
  for (int r = 0; r < kProbeRepeats; ++r) {
    auto acc = probe_pass(a, b, fractions, config, mix_seed(salt, std::uint64_t(r)));
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += acc[i];
  }
  for (double& v : mean) v /= double(kProbeRepeats);
  return mean;
}

}  // namespace

NtdCurve name_that_dataset(const std::vector<FeatureVector>& a,
                           const std::vector<FeatureVector>& b,
                           const std::vector<double>& fractions, const TrainConfig& config) {
  if (a.size() != b.size()) {
    throw SizeMismatch("probe sides differ: " + std::to_string(a.size()) + " vs " +
                       std::to_string(b.size()));
  }
  if (a.empty()) throw EmptyDataset("nothing to probe");
  if (fractions.empty()) throw SpecInvalid("need at least one training fraction");
  for (double f : fractions) {
    if (!(f > 0.0 && f <= 1.0)) throw SpecInvalid("fractions must lie in (0, 1]");
  }

  NtdCurve curve;
  curve.fractions = fractions;
  curve.accuracy = probe_curve(a, b, fractions, config, 0x07e57aULL);

  // Control: the same protocol on two halves of side a. Anything it reports
  // above chance is sample-size noise, not a real difference. The halves are
  // redrawn every repeat, so each image spends time on both sides and
  // split-specific quirks cancel out of the mean.
  std::size_t half = a.size() / 2;
  if (half < 2) throw DegenerateData("too few images for the control split");
  std::vector<double> control(fractions.size(), 0.0);
  for (int r = 0; r < kProbeRepeats; ++r) {
    std::vector<std::size_t> idx(a.size());
    std::iota(idx.begin(), idx.end(), std::size_t(0));
    Rng(mix_seed(mix_seed(config.seed, 0xc047701ULL), std::uint64_t(r))).shuffle(idx);
    std::vector<FeatureVector> a1, a2;
    for (std::size_t i = 0; i < half; ++i) a1.push_back(a[idx[i]]);
    for (std::size_t i = half; i < 2 * half; ++i) a2.push_back(a[idx[i]]);
    auto acc = probe_pass(a1, a2, fractions, config, mix_seed(0xc047702ULL, std::uint64_t(r)));
    for (std::size_t i = 0; i < control.size(); ++i) control[i] += acc[i];
  }
  for (double& v : control) v /= double(kProbeRepeats);
  curve.control_accuracy = control;
  return curve;
}

std::pair<double, double> mean_half_diff(double x, double y) {
  return {(x + y) / 2.0, std::fabs(x - y) / 2.0};
}

namespace {

struct SplitExamples {
  std::vector<Example> train;
  std::vector<Example> test;
};

SplitExamples split_75_25(const DatasetManifest& m, const std::vector<FeatureVector>& features,
                          std::uint64_t seed) {
  std::size_t n = m.records.size();
  std::size_t test_n = std::max<std::size_t>(1, n / 4);
  if (n <= test_n) throw DegenerateData("too few images for a train/test split");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t(0));
  Rng(seed).shuffle(idx);
  SplitExamples out;
  for (std::size_t i = 0; i < n; ++i) {
    Example ex{features[idx[i]], m.records[idx[i]].label};
    if (i < test_n) {
      out.test.push_back(std::move(ex));
    } else {
      out.train.push_back(std::move(ex));
    }
  }
  return out;
}

}  // namespace

CrossGenMatrix cross_generalization(const DatasetManifest& a, const RasterStore& ra,
                                    const DatasetManifest& b, const RasterStore& rb,
                                    const TrainConfig& config, int jobs) {
  if (a.records.empty() || b.records.empty()) throw EmptyDataset("both sets must be non-empty");
  if (a.num_classes != b.num_classes) {
    throw ModelMismatch("vocabularies differ: " + std::to_string(a.num_classes) + " vs " +
                        std::to_string(b.num_classes));
  }
  std::vector<FeatureVector> fa = dataset_features(a, ra, jobs);
  std::vector<FeatureVector> fb = dataset_features(b, rb, jobs);
  SplitExamples sa = split_75_25(a, fa, mix_seed(config.seed, 0xcf0aULL));
  SplitExamples sb = split_75_25(b, fb, mix_seed(config.seed, 0xcf0bULL));

  ClassifierModel ma = train_softmax(sa.train, a.num_classes, config);
  ClassifierModel mb = train_softmax(sb.train, b.num_classes, config);

  CrossGenMatrix out;
  out.accuracy[0][0] = evaluate_examples(ma, sa.test);
  out.accuracy[0][1] = evaluate_examples(ma, sb.test);
  out.accuracy[1][0] = evaluate_examples(mb, sa.test);
  out.accuracy[1][1] = evaluate_examples(mb, sb.test);
  for (int i = 0; i < 2; ++i) {
    auto [mean, half] = mean_half_diff(out.accuracy[i][0], out.accuracy[i][1]);
    out.row_mean[i] = mean;
    out.row_half_diff[i] = half;
  }
  return out;
}

LabelQualityReport label_quality(const DatasetManifest& m, const RasterStore& rasters,
                                 const DetectorModel& detector,
                                 const ClassifierModel& classifier, const DetectParams& params,
                                 int jobs) {
  if (m.records.empty()) throw EmptyDataset("no records to measure");
  if (classifier.class_count != m.num_classes) {
    throw ModelMismatch("classifier trained for " + std::to_string(classifier.class_count) +
                        " classes, manifest declares " + std::to_string(m.num_classes));
  }
  std::vector<char> supported(m.records.size(), 0);
  parallel_for(jobs, m.records.size(), [&](std::size_t i) {
    const ImageRecord& rec = m.records[i];
    const ImageRaster& img = rasters.get(rec.id);
    for (const Region& r : detect_regions(detector, rec, img, params)) {
      FeatureVector f = extract_features(crop(img, r.box));
      if (predict_class(classifier, f) == rec.label) {
        supported[i] = 1;
        break;
      }
    }
  });
  LabelQualityReport out;
  out.images = int(m.records.size());
  for (char s : supported) out.supported += int(s);
  out.supported_fraction = double(out.supported) / double(out.images);
  out.unsupported_fraction = 1.0 - out.supported_fraction;
  return out;
}

namespace {

DetectorModel sweep_detector(const SweepConfig& config, const DatasetManifest& standard,
                             const RasterStore& standard_rasters, double lambda) {
  if (config.detector == DetectorKind::oracle) {
    return make_oracle_detector(lambda, config.oracle_jitter_px, config.oracle_score_noise,
                                config.seed);
  }
  auto supervision = build_supervision(standard, lambda);
  return train_template_detector(supervision, standard_rasters, lambda,
                                 config.template_score_floor);
}

ClassifierModel sweep_classifier(const SweepConfig& config, const DatasetManifest& standard,
                                 const RasterStore& standard_rasters, double lambda_o) {
  std::vector<Example> data;
  for (const SupervisionItem& item : build_supervision(standard, lambda_o)) {
    FeatureVector f = extract_features(crop(standard_rasters.get(item.image_id), item.box));
    data.emplace_back(std::move(f), item.label);
  }
  return train_softmax(data, standard.num_classes, config.classifier_config);
}

}  // namespace

SweepResult parameter_sweep(const DatasetManifest& standard, const RasterStore& standard_rasters,
                            const DatasetManifest& web, const RasterStore& web_rasters,
                            const SweepConfig& config) {
  if (config.lambda_r_grid.empty() || config.lambda_o_grid.empty() ||
      config.eta_grid.empty() || config.epsilon_grid.empty()) {
    throw EmptyGrid("every sweep axis needs at least one value");
  }
  for (double v : config.lambda_r_grid) {
    if (!(v > 0.0 && v <= 1.0)) throw SpecInvalid("lambda_r values must lie in (0, 1]");
  }
  for (double v : config.lambda_o_grid) {
    if (!(v > 0.0 && v <= 1.0)) throw SpecInvalid("lambda_o values must lie in (0, 1]");
  }
  for (double v : config.eta_grid) {
    if (!(v >= 0.0 && v <= 1.0)) throw SpecInvalid("eta values must lie in [0, 1]");
  }
  for (double v : config.epsilon_grid) {
    if (!(v >= 0.0 && v <= 1.0)) throw SpecInvalid("epsilon values must lie in [0, 1]");
  }

  std::vector<FeatureVector> standard_features =
      dataset_features(standard, standard_rasters, config.jobs);

  // Detectors and classifiers depend only on their shrink factor, so build
  // each once per distinct grid value.
  std::vector<DetectorModel> region_detectors, object_detectors;
  for (double lr : config.lambda_r_grid) {
    region_detectors.push_back(sweep_detector(config, standard, standard_rasters, lr));
  }
  std::vector<ClassifierModel> classifiers;
  for (double lo : config.lambda_o_grid) {
    object_detectors.push_back(sweep_detector(config, standard, standard_rasters, lo));
    classifiers.push_back(sweep_classifier(config, standard, standard_rasters, lo));
  }

  SweepResult result;
  for (std::size_t ri = 0; ri < config.lambda_r_grid.size(); ++ri) {
    for (std::size_t oi = 0; oi < config.lambda_o_grid.size(); ++oi) {
      for (double eta : config.eta_grid) {
        for (double epsilon : config.epsilon_grid) {
          SweepPoint point;
          point.lambda_r = config.lambda_r_grid[ri];
          point.lambda_o = config.lambda_o_grid[oi];
          point.eta = eta;
          point.epsilon = epsilon;
          if (point.lambda_o >= point.lambda_r) {
            point.valid = false;
            result.points.push_back(point);
            continue;
          }
          ConstraintConfig cc;
          cc.eta = eta;
          cc.epsilon = epsilon;
          cc.nms_threshold = config.nms_threshold;
          cc.max_regions = config.max_regions;
          DebiasResult debiased =
              debias_dataset(web, web_rasters, region_detectors[ri], object_detectors[oi],
                             classifiers[oi], cc, "rasters/debiased", config.jobs);
          point.retained = int(debiased.manifest.records.size());
          if (debiased.manifest.records.empty()) {
            point.degenerate = true;
            point.objective = 1.0;
            result.points.push_back(point);
            continue;
          }
          std::vector<FeatureVector> debiased_features =
              dataset_features(debiased.manifest, debiased.rasters, config.jobs);
          std::size_t n = std::min(standard_features.size(), debiased_features.size());
          std::vector<FeatureVector> sa =
              subsample(standard_features, n, mix_seed(config.seed, 0x5a17aULL));
          std::vector<FeatureVector> sb =
              subsample(debiased_features, n, mix_seed(config.seed, 0x5a17bULL));
          NtdCurve curve = name_that_dataset(sa, sb, {1.0}, config.classifier_config);
          point.objective = curve.accuracy.back();
          result.points.push_back(point);
        }
      }
    }
  }

  for (std::size_t i = 0; i < result.points.size(); ++i) {
    const SweepPoint& p = result.points[i];
    if (!p.valid || p.degenerate) continue;
    if (result.best_index < 0 || p.objective < result.points[std::size_t(result.best_index)].objective) {
      result.best_index = int(i);
    }
  }
  return result;
}

}  // namespace debiaskit
