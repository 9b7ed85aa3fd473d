#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "debiaskit/features.hpp"
#include "debiaskit/manifest.hpp"

namespace debiaskit {

struct TrainConfig {
  double learning_rate = 0.001;
  int lr_decay_epochs = 10;   // divide the rate every this many epochs
  double lr_decay_factor = 10.0;
  int epochs = 30;
  int batch_size = 20;
  std::uint64_t seed = 1;
  // prototype starts each class row at that class's mean training feature
  // (a nearest-centroid warm start the SGD then refines); gaussian draws
  // sigma-0.01 noise; zeros is the bare cold start.
  enum class Init { zeros, gaussian, prototype } init = Init::prototype;
};

struct EpochStats {
  int epoch = 0;
  double learning_rate = 0.0;
  double loss = 0.0;
  double accuracy = 0.0;
};

// Multinomial logistic regression. weights is row-major, class_count rows of
// (feature_dim + 1) entries; the last column is the bias.
struct ClassifierModel {
  int class_count = 0;
  int feature_dim = kFeatureDim;
  std::vector<double> weights;
  std::vector<EpochStats> train_log;
};

using Example = std::pair<FeatureVector, int>;

// Mini-batch SGD on mean cross-entropy with an epoch-wise seeded shuffle.
// The last partial batch is used at its true size. Throws DegenerateData if
// a class has no examples, NonFinite if the loss leaves the reals.
ClassifierModel train_softmax(const std::vector<Example>& data, int class_count,
                              const TrainConfig& config);

// Softmax probabilities with max-subtraction; entries sum to 1 within 1e-9.
std::vector<double> predict_probs(const ClassifierModel& model, const FeatureVector& f);

// argmax of predict_probs; ties resolve to the lowest class index.
int predict_class(const ClassifierModel& model, const FeatureVector& f);
int argmax_class(const std::vector<double>& probs);

// Max relative difference between the analytic gradient and central finite
// differences for one example, over every weight coordinate.
double gradient_check(const ClassifierModel& model, const Example& example, double epsilon);

double evaluate_examples(const ClassifierModel& model, const std::vector<Example>& data);
double evaluate(const ClassifierModel& model, const DatasetManifest& dataset,
                const RasterStore& rasters);

void save_classifier(const ClassifierModel& model, const std::string& path);
ClassifierModel load_classifier(const std::string& path);

}  // namespace debiaskit
