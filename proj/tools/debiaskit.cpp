#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "debiaskit/biasmetrics.hpp"
#include "debiaskit/debias.hpp"
#include "debiaskit/errors.hpp"
#include "debiaskit/pipeline.hpp"
#include "debiaskit/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace debiaskit;

namespace {

struct GlobalArgs {
  std::string workdir = ".";
};

std::string resolve(const GlobalArgs& g, const std::string& p) {
  fs::path fp(p);
  if (fp.is_absolute()) return p;
  return (fs::path(g.workdir) / fp).string();
}

std::pair<DatasetManifest, RasterStore> load_dataset(const std::string& manifest_path) {
  DatasetManifest m = load_manifest(manifest_path);
  std::string base = fs::path(manifest_path).parent_path().string();
  if (base.empty()) base = ".";
  RasterStore rasters = RasterStore::from_manifest(m, base);
  return {std::move(m), std::move(rasters)};
}

void emit(const json& j, const std::string& out_path) {
  if (!out_path.empty()) atomic_write_file(out_path, j.dump(2) + "\n");
  std::cout << j.dump(2) << "\n";
}

json curve_json(const NtdCurve& curve, std::size_t pair_size) {
  return {{"fractions", curve.fractions},
          {"accuracy", curve.accuracy},
          {"control_accuracy", curve.control_accuracy},
          {"pair_size", pair_size}};
}

json stats_json(const ScaleDensityStats& s) {
  return {{"images", s.images},
          {"images_with_detections", s.images_with_detections},
          {"mean_density", s.mean_density},
          {"mean_scale", s.mean_scale}};
}

TrainConfig::Init parse_init(const std::string& name) {
  if (name == "zeros") return TrainConfig::Init::zeros;
  if (name == "gaussian") return TrainConfig::Init::gaussian;
  throw ConfigError("init must be \"zeros\" or \"gaussian\"");
}

void add_gen_synth(CLI::App& app, const GlobalArgs& g) {
  struct Opts {
    std::string config;
    PipelineConfig cfg;
    CLI::Option *o_seed, *o_jobs, *o_classes, *o_ipc, *o_size, *o_noise, *o_outlier, *o_texture;
  };
  auto o = std::make_shared<Opts>();
  CLI::App* sub = app.add_subcommand("gen-synth", "synthesize the standard, test, and web corpora");
  sub->add_option("--config", o->config, "pipeline config JSON");
  o->o_seed = sub->add_option("--seed", o->cfg.seed, "master seed");
  o->o_jobs = sub->add_option("--jobs", o->cfg.jobs, "worker threads (0 = all cores)");
  o->o_classes = sub->add_option("--num-classes", o->cfg.synth.num_classes, "vocabulary size");
  o->o_ipc = sub->add_option("--images-per-class", o->cfg.synth.images_per_class, "images per class");
  o->o_size = sub->add_option("--image-size", o->cfg.synth.image_size, "frame side in pixels");
  o->o_noise = sub->add_option("--label-noise-rate", o->cfg.synth.label_noise_rate,
                               "fraction of mis-tagged web images");
  o->o_outlier = sub->add_option("--outlier-rate", o->cfg.synth.outlier_rate,
                                 "fraction of out-of-vocabulary web images");
  o->o_texture = sub->add_option("--texture", o->cfg.synth.background_texture_level,
                                 "background texture strength in [0, 1]");
  sub->callback([o, &g] {
    PipelineConfig cfg =
        o->config.empty() ? default_pipeline_config() : load_pipeline_config(resolve(g, o->config));
    if (o->o_seed->count()) cfg.seed = o->cfg.seed;
    if (o->o_jobs->count()) cfg.jobs = o->cfg.jobs;
    if (o->o_classes->count()) cfg.synth.num_classes = o->cfg.synth.num_classes;
    if (o->o_ipc->count()) cfg.synth.images_per_class = o->cfg.synth.images_per_class;
    if (o->o_size->count()) cfg.synth.image_size = o->cfg.synth.image_size;
    if (o->o_noise->count()) cfg.synth.label_noise_rate = o->cfg.synth.label_noise_rate;
    if (o->o_outlier->count()) cfg.synth.outlier_rate = o->cfg.synth.outlier_rate;
    if (o->o_texture->count()) {
      cfg.synth.background_texture_level = o->cfg.synth.background_texture_level;
    }
    validate_pipeline_config(cfg);
    CorporaSizes sizes = generate_corpora(cfg, g.workdir);
    emit({{"standard", sizes.standard},
          {"standard_test", sizes.standard_test},
          {"web", sizes.web}},
         "");
  });
}

void add_build_weakboxes(CLI::App& app, const GlobalArgs& g) {
  struct Opts {
    std::string manifest = "standard.jsonl";
    double lambda = 0.0;
    std::string out;
  };
  auto o = std::make_shared<Opts>();
  CLI::App* sub =
      app.add_subcommand("build-weakboxes", "derive centered pseudo boxes from image tags");
  sub->add_option("--manifest", o->manifest, "standard-source manifest")->capture_default_str();
  sub->add_option("--lambda", o->lambda, "box shrink factor in (0, 1]")->required();
  sub->add_option("--out", o->out, "supervision JSONL to write")->required();
  sub->callback([o, &g] {
    DatasetManifest m = load_manifest(resolve(g, o->manifest));
    auto items = build_supervision(m, o->lambda);
    save_supervision(items, resolve(g, o->out));
    emit({{"items", items.size()}, {"out", o->out}}, "");
  });
}

void add_train_detector(CLI::App& app, const GlobalArgs& g) {
  struct Opts {
    std::string kind = "template";
    double lambda = 0.0;
    std::string supervision;
    std::string manifest = "standard.jsonl";
    double score_floor = kDefaultTemplateScoreFloor;
    int jitter = 0;
    double noise = 0.0;
    std::uint64_t seed = 1;
    std::string out;
  };
  auto o = std::make_shared<Opts>();
  CLI::App* sub = app.add_subcommand("train-detector", "fit per-class appearance templates");
  sub->add_option("--kind", o->kind, "template or oracle")->capture_default_str();
  sub->add_option("--lambda", o->lambda, "shrink factor the boxes were built with")->required();
  sub->add_option("--supervision", o->supervision, "weak box JSONL (template kind)");
  sub->add_option("--manifest", o->manifest, "manifest holding the training rasters")
      ->capture_default_str();
  sub->add_option("--score-floor", o->score_floor, "min objectness to keep a window")
      ->capture_default_str();
  sub->add_option("--jitter", o->jitter, "oracle box jitter in pixels");
  sub->add_option("--noise", o->noise, "oracle objectness noise amplitude");
  sub->add_option("--seed", o->seed, "oracle rng seed");
  sub->add_option("--out", o->out, "detector JSON to write")->required();
  sub->callback([o, &g] {
    DetectorModel model;
    if (detector_kind_from_string(o->kind) == DetectorKind::oracle) {
      model = make_oracle_detector(o->lambda, o->jitter, o->noise, o->seed);
    } else {
      if (o->supervision.empty()) {
        throw ConfigError("--supervision is required for the template kind");
      }
      auto [m, rasters] = load_dataset(resolve(g, o->manifest));
      auto items = load_supervision(resolve(g, o->supervision));
      model = train_template_detector(items, rasters, o->lambda, o->score_floor);
    }
    save_detector(model, resolve(g, o->out));
    emit({{"kind", to_string(model.kind)},
          {"classes", model.class_count},
          {"out", o->out}},
         "");
  });
}

void add_detect(CLI::App& app, const GlobalArgs& g) {
  struct Opts {
    std::string detector;
    std::string manifest;
    std::string out;
    double nms = 0.5;
    int max_regions = 16;
  };
  auto o = std::make_shared<Opts>();
  CLI::App* sub = app.add_subcommand("detect", "run a detector and export its proposals");
  sub->add_option("--detector", o->detector, "detector JSON")->required();
  sub->add_option("--manifest", o->manifest, "manifest to scan")->required();
  sub->add_option("--out", o->out, "predictions JSONL to write")->required();
  sub->add_option("--nms", o->nms, "overlap threshold")->capture_default_str();
  sub->add_option("--max-regions", o->max_regions, "proposal cap per image")
      ->capture_default_str();
  sub->callback([o, &g] {
    DetectorModel model = load_detector(resolve(g, o->detector));
    auto [m, rasters] = load_dataset(resolve(g, o->manifest));
    DetectParams params;
    params.nms_threshold = o->nms;
    params.max_regions = o->max_regions;
    PredictionFile preds;
    std::size_t total = 0;
    for (const auto& rec : m.records) {
      std::vector<Detection> dets;
      for (const Region& r : detect_regions(model, rec, rasters.get(rec.id), params)) {
        Detection d;
        d.box = r.box;
        d.objectness = r.objectness;
        d.class_probs = r.class_probs;
        dets.push_back(std::move(d));
      }
      total += dets.size();
      preds.by_image.emplace(rec.id, std::move(dets));
    }
    export_predictions(preds, resolve(g, o->out));
    emit({{"images", m.records.size()}, {"detections", total}, {"out", o->out}}, "");
  });
}

void add_train_classifier(CLI::App& app, const GlobalArgs& g) {
  struct Opts {
    std::vector<std::string> manifests;
    std::string supervision;
    bool whole_image = false;
    std::string out;
    TrainConfig train;
    std::string init = "gaussian";
  };
  auto o = std::make_shared<Opts>();
  CLI::App* sub = app.add_subcommand("train-classifier", "fit the softmax shape classifier");
  sub->add_option("--manifest", o->manifests, "training manifest (repeatable)")->required();
  sub->add_option("--supervision", o->supervision, "train on these weak crops");
  sub->add_flag("--whole-image", o->whole_image, "train on full frames with manifest labels");
  sub->add_option("--out", o->out, "classifier JSON to write")->required();
  sub->add_option("--epochs", o->train.epochs)->capture_default_str();
  sub->add_option("--batch-size", o->train.batch_size)->capture_default_str();
  sub->add_option("--learning-rate", o->train.learning_rate)->capture_default_str();
  sub->add_option("--seed", o->train.seed)->capture_default_str();
  sub->add_option("--init", o->init, "zeros or gaussian")->capture_default_str();
  sub->callback([o, &g] {
    if (o->whole_image == !o->supervision.empty()) {
      throw ConfigError("pass exactly one of --supervision or --whole-image");
    }
    TrainConfig tc = o->train;
    tc.init = parse_init(o->init);
    std::vector<Example> data;
    int num_classes = 0;
    if (!o->supervision.empty()) {
      if (o->manifests.size() != 1) {
        throw ConfigError("--supervision mode takes exactly one --manifest");
      }
      auto [m, rasters] = load_dataset(resolve(g, o->manifests.front()));
      num_classes = m.num_classes;
      for (const SupervisionItem& item : load_supervision(resolve(g, o->supervision))) {
        data.emplace_back(extract_features(crop(rasters.get(item.image_id), item.box)),
                          item.label);
      }
    } else {
      for (const std::string& path : o->manifests) {
        auto [m, rasters] = load_dataset(resolve(g, path));
        if (num_classes == 0) num_classes = m.num_classes;
        if (m.num_classes != num_classes) {
          throw ModelMismatch("manifests disagree on the class vocabulary");
        }
        for (const auto& rec : m.records) {
          data.emplace_back(extract_features(rasters.get(rec.id)), rec.label);
        }
      }
    }
    ClassifierModel model = train_softmax(data, num_classes, tc);
    save_classifier(model, resolve(g, o->out));
    emit({{"examples", data.size()},
          {"classes", num_classes},
          {"final_train_accuracy", model.train_log.back().accuracy},
          {"out", o->out}},
         "");
  });
}

void add_debias(CLI::App& app, const GlobalArgs& g) {
  struct Opts {
    std::string web = "web.jsonl";
    std::string region_detector;
    std::string object_detector;
    std::string classifier;
    std::string out_manifest = "debiased.jsonl";
    std::string raster_dir = "rasters/debiased";
    std::string report;
    ConstraintConfig constraints;
    int jobs = 1;
  };
  auto o = std::make_shared<Opts>();
  CLI::App* sub = app.add_subcommand(
      "debias", "keep web regions that pass the form and label tests, crop them out");
  sub->add_option("--web", o->web, "web manifest")->capture_default_str();
  sub->add_option("--region-detector", o->region_detector, "detector JSON")->required();
  sub->add_option("--object-detector", o->object_detector, "detector JSON")->required();
  sub->add_option("--classifier", o->classifier, "tag classifier JSON")->required();
  sub->add_option("--out-manifest", o->out_manifest)->capture_default_str();
  sub->add_option("--raster-dir", o->raster_dir,
                  "crop directory, relative to the output manifest")
      ->capture_default_str();
  sub->add_option("--report", o->report, "selection report JSONL to write");
  sub->add_option("--eta", o->constraints.eta)->capture_default_str();
  sub->add_option("--epsilon", o->constraints.epsilon)->capture_default_str();
  sub->add_option("--nms", o->constraints.nms_threshold)->capture_default_str();
  sub->add_option("--max-regions", o->constraints.max_regions)->capture_default_str();
  sub->add_option("--jobs", o->jobs)->capture_default_str();
  sub->callback([o, &g] {
    auto [web, rasters] = load_dataset(resolve(g, o->web));
    DetectorModel region_det = load_detector(resolve(g, o->region_detector));
    DetectorModel object_det = load_detector(resolve(g, o->object_detector));
    ClassifierModel tags = load_classifier(resolve(g, o->classifier));
    DebiasResult res = debias_dataset(web, rasters, region_det, object_det, tags,
                                      o->constraints, o->raster_dir, o->jobs);
    std::string out_path = resolve(g, o->out_manifest);
    fs::path base = fs::path(out_path).parent_path();
    for (const auto& rec : res.manifest.records) {
      fs::path p = base / rec.raster_path;
      fs::create_directories(p.parent_path());
      write_ppm(res.rasters.get(rec.id), p.string());
    }
    save_manifest(res.manifest, out_path);
    if (!o->report.empty()) save_report(res.report, resolve(g, o->report));
    emit({{"images", res.report.images_seen},
          {"proposed", res.report.regions_proposed},
          {"retained", res.report.regions_retained},
          {"out", o->out_manifest}},
         "");
  });
}

void add_metrics_scale_density(CLI::App& app, const GlobalArgs& g) {
  struct Opts {
    std::string manifest;
    std::string detector;
    std::string classifier;
    double nms = 0.5;
    int max_regions = 16;
    int jobs = 1;
    std::string out;
  };
  auto o = std::make_shared<Opts>();
  CLI::App* sub =
      app.add_subcommand("metrics-scale-density", "mean object scale and count per image");
  sub->add_option("--manifest", o->manifest)->required();
  sub->add_option("--detector", o->detector)->required();
  sub->add_option("--classifier", o->classifier,
                  "count only detections the classifier assigns to the tag");
  sub->add_option("--nms", o->nms)->capture_default_str();
  sub->add_option("--max-regions", o->max_regions)->capture_default_str();
  sub->add_option("--jobs", o->jobs)->capture_default_str();
  sub->add_option("--out", o->out, "report JSON to write");
  sub->callback([o, &g] {
    auto [m, rasters] = load_dataset(resolve(g, o->manifest));
    DetectorModel detector = load_detector(resolve(g, o->detector));
    ClassifierModel filter;
    bool filtered = !o->classifier.empty();
    if (filtered) filter = load_classifier(resolve(g, o->classifier));
    DetectParams params;
    params.nms_threshold = o->nms;
    params.max_regions = o->max_regions;
    ScaleDensityStats stats = dataset_scale_density(m, rasters, detector,
                                                    filtered ? &filter : nullptr, params,
                                                    o->jobs);
    emit(stats_json(stats), o->out.empty() ? "" : resolve(g, o->out));
  });
}

void add_metrics_ntd(CLI::App& app, const GlobalArgs& g) {
  struct Opts {
    std::string manifest_a;
    std::string manifest_b;
    std::vector<double> fractions = {0.1, 0.25, 0.5, 0.75, 1.0};
    std::uint64_t seed = 1;
    int epochs = 30;
    int jobs = 1;
    std::string out;
  };
  auto o = std::make_shared<Opts>();
  CLI::App* sub = app.add_subcommand(
      "metrics-ntd", "train a probe to tell two datasets apart; near-chance means alike");
  sub->add_option("--manifest-a", o->manifest_a)->required();
  sub->add_option("--manifest-b", o->manifest_b)->required();
  sub->add_option("--fractions", o->fractions, "training fractions in (0, 1]")
      ->delimiter(',')
      ->capture_default_str();
  sub->add_option("--seed", o->seed)->capture_default_str();
  sub->add_option("--epochs", o->epochs)->capture_default_str();
  sub->add_option("--jobs", o->jobs)->capture_default_str();
  sub->add_option("--out", o->out, "report JSON to write");
  sub->callback([o, &g] {
    auto [ma, ra] = load_dataset(resolve(g, o->manifest_a));
    auto [mb, rb] = load_dataset(resolve(g, o->manifest_b));
    std::vector<FeatureVector> fa = dataset_features(ma, ra, o->jobs);
    std::vector<FeatureVector> fb = dataset_features(mb, rb, o->jobs);
    std::size_t n = std::min(fa.size(), fb.size());
    fa = subsample(fa, n, mix_seed(o->seed, 0x9a11ULL));
    fb = subsample(fb, n, mix_seed(o->seed, 0x9a12ULL));
    TrainConfig tc;
    tc.seed = o->seed;
    tc.epochs = o->epochs;
    NtdCurve curve = name_that_dataset(fa, fb, o->fractions, tc);
    emit(curve_json(curve, n), o->out.empty() ? "" : resolve(g, o->out));
  });
}

void add_metrics_crossgen(CLI::App& app, const GlobalArgs& g) {
  struct Opts {
    std::string manifest_a;
    std::string manifest_b;
    std::uint64_t seed = 1;
    int jobs = 1;
    std::string out;
  };
  auto o = std::make_shared<Opts>();
  CLI::App* sub = app.add_subcommand(
      "metrics-crossgen", "train on each set, evaluate on both held-out splits");
  sub->add_option("--manifest-a", o->manifest_a)->required();
  sub->add_option("--manifest-b", o->manifest_b)->required();
  sub->add_option("--seed", o->seed)->capture_default_str();
  sub->add_option("--jobs", o->jobs)->capture_default_str();
  sub->add_option("--out", o->out, "report JSON to write");
  sub->callback([o, &g] {
    auto [ma, ra] = load_dataset(resolve(g, o->manifest_a));
    auto [mb, rb] = load_dataset(resolve(g, o->manifest_b));
    TrainConfig tc;
    tc.seed = o->seed;
    CrossGenMatrix m = cross_generalization(ma, ra, mb, rb, tc, o->jobs);
    json j = {{"accuracy",
               {{m.accuracy[0][0], m.accuracy[0][1]}, {m.accuracy[1][0], m.accuracy[1][1]}}},
              {"row_mean", {m.row_mean[0], m.row_mean[1]}},
              {"row_half_diff", {m.row_half_diff[0], m.row_half_diff[1]}}};
    emit(j, o->out.empty() ? "" : resolve(g, o->out));
  });
}

void add_metrics_labelquality(CLI::App& app, const GlobalArgs& g) {
  struct Opts {
    std::string manifest;
    std::string detector;
    std::string classifier;
    double nms = 0.5;
    int max_regions = 16;
    int jobs = 1;
    std::string out;
  };
  auto o = std::make_shared<Opts>();
  CLI::App* sub = app.add_subcommand(
      "metrics-labelquality", "fraction of images whose tag no detection supports");
  sub->add_option("--manifest", o->manifest)->required();
  sub->add_option("--detector", o->detector)->required();
  sub->add_option("--classifier", o->classifier)->required();
  sub->add_option("--nms", o->nms)->capture_default_str();
  sub->add_option("--max-regions", o->max_regions)->capture_default_str();
  sub->add_option("--jobs", o->jobs)->capture_default_str();
  sub->add_option("--out", o->out, "report JSON to write");
  sub->callback([o, &g] {
    auto [m, rasters] = load_dataset(resolve(g, o->manifest));
    DetectorModel detector = load_detector(resolve(g, o->detector));
    ClassifierModel classifier = load_classifier(resolve(g, o->classifier));
    DetectParams params;
    params.nms_threshold = o->nms;
    params.max_regions = o->max_regions;
    LabelQualityReport lq = label_quality(m, rasters, detector, classifier, params, o->jobs);
    emit({{"images", lq.images},
          {"supported", lq.supported},
          {"supported_fraction", lq.supported_fraction},
          {"unsupported_fraction", lq.unsupported_fraction}},
         o->out.empty() ? "" : resolve(g, o->out));
  });
}

void add_sweep(CLI::App& app, const GlobalArgs& g) {
  struct Opts {
    std::string standard = "standard.jsonl";
    std::string web = "web.jsonl";
    SweepConfig cfg;
    std::string kind = "oracle";
    std::string out;
  };
  auto o = std::make_shared<Opts>();
  CLI::App* sub =
      app.add_subcommand("sweep", "grid search the four curation thresholds");
  sub->add_option("--standard", o->standard)->capture_default_str();
  sub->add_option("--web", o->web)->capture_default_str();
  sub->add_option("--lambda-r", o->cfg.lambda_r_grid, "region shrink grid")
      ->delimiter(',')
      ->required();
  sub->add_option("--lambda-o", o->cfg.lambda_o_grid, "object shrink grid")
      ->delimiter(',')
      ->required();
  sub->add_option("--eta", o->cfg.eta_grid, "form threshold grid")->delimiter(',')->required();
  sub->add_option("--epsilon", o->cfg.epsilon_grid, "label threshold grid")
      ->delimiter(',')
      ->required();
  sub->add_option("--detector-kind", o->kind, "oracle or template")->capture_default_str();
  sub->add_option("--score-floor", o->cfg.template_score_floor)->capture_default_str();
  sub->add_option("--jitter", o->cfg.oracle_jitter_px)->capture_default_str();
  sub->add_option("--noise", o->cfg.oracle_score_noise)->capture_default_str();
  sub->add_option("--nms", o->cfg.nms_threshold)->capture_default_str();
  sub->add_option("--max-regions", o->cfg.max_regions)->capture_default_str();
  sub->add_option("--seed", o->cfg.seed)->capture_default_str();
  sub->add_option("--jobs", o->cfg.jobs)->capture_default_str();
  sub->add_option("--out", o->out, "report JSON to write");
  sub->callback([o, &g] {
    auto [std_m, std_r] = load_dataset(resolve(g, o->standard));
    auto [web_m, web_r] = load_dataset(resolve(g, o->web));
    SweepConfig cfg = o->cfg;
    cfg.detector = detector_kind_from_string(o->kind);
    cfg.classifier_config.seed = cfg.seed;
    SweepResult result = parameter_sweep(std_m, std_r, web_m, web_r, cfg);
    json points = json::array();
    for (const SweepPoint& p : result.points) {
      points.push_back({{"lambda_r", p.lambda_r},
                        {"lambda_o", p.lambda_o},
                        {"eta", p.eta},
                        {"epsilon", p.epsilon},
                        {"valid", p.valid},
                        {"degenerate", p.degenerate},
                        {"retained", p.retained},
                        {"objective", p.objective}});
    }
    emit({{"points", points}, {"best_index", result.best_index}},
         o->out.empty() ? "" : resolve(g, o->out));
  });
}

void add_pipeline(CLI::App& app, const GlobalArgs& g) {
  struct Opts {
    std::string config;
    PipelineConfig cfg;
    std::string kind;
    CLI::Option *o_seed, *o_jobs, *o_kind, *o_floor, *o_lr, *o_lo, *o_eta, *o_eps, *o_epochs,
        *o_batch, *o_rate, *o_classes, *o_ipc, *o_size, *o_noise, *o_outlier;
  };
  auto o = std::make_shared<Opts>();
  CLI::App* sub = app.add_subcommand("pipeline", "run every stage end to end with a ledger");
  sub->add_option("--config", o->config, "pipeline config JSON");
  o->o_seed = sub->add_option("--seed", o->cfg.seed);
  o->o_jobs = sub->add_option("--jobs", o->cfg.jobs);
  o->o_kind = sub->add_option("--detector-kind", o->kind, "oracle or template");
  o->o_floor = sub->add_option("--score-floor", o->cfg.detector.score_floor);
  o->o_lr = sub->add_option("--lambda-r", o->cfg.weak.lambda_r);
  o->o_lo = sub->add_option("--lambda-o", o->cfg.weak.lambda_o);
  o->o_eta = sub->add_option("--eta", o->cfg.constraints.eta);
  o->o_eps = sub->add_option("--epsilon", o->cfg.constraints.epsilon);
  o->o_epochs = sub->add_option("--epochs", o->cfg.train.epochs);
  o->o_batch = sub->add_option("--batch-size", o->cfg.train.batch_size);
  o->o_rate = sub->add_option("--learning-rate", o->cfg.train.learning_rate);
  o->o_classes = sub->add_option("--num-classes", o->cfg.synth.num_classes);
  o->o_ipc = sub->add_option("--images-per-class", o->cfg.synth.images_per_class);
  o->o_size = sub->add_option("--image-size", o->cfg.synth.image_size);
  o->o_noise = sub->add_option("--label-noise-rate", o->cfg.synth.label_noise_rate);
  o->o_outlier = sub->add_option("--outlier-rate", o->cfg.synth.outlier_rate);
  sub->callback([o, &g] {
    PipelineConfig cfg =
        o->config.empty() ? default_pipeline_config() : load_pipeline_config(resolve(g, o->config));
    if (o->o_seed->count()) cfg.seed = o->cfg.seed;
    if (o->o_jobs->count()) cfg.jobs = o->cfg.jobs;
    if (o->o_kind->count()) cfg.detector.kind = detector_kind_from_string(o->kind);
    if (o->o_floor->count()) cfg.detector.score_floor = o->cfg.detector.score_floor;
    if (o->o_lr->count()) cfg.weak.lambda_r = o->cfg.weak.lambda_r;
    if (o->o_lo->count()) cfg.weak.lambda_o = o->cfg.weak.lambda_o;
    if (o->o_eta->count()) cfg.constraints.eta = o->cfg.constraints.eta;
    if (o->o_eps->count()) cfg.constraints.epsilon = o->cfg.constraints.epsilon;
    if (o->o_epochs->count()) cfg.train.epochs = o->cfg.train.epochs;
    if (o->o_batch->count()) cfg.train.batch_size = o->cfg.train.batch_size;
    if (o->o_rate->count()) cfg.train.learning_rate = o->cfg.train.learning_rate;
    if (o->o_classes->count()) cfg.synth.num_classes = o->cfg.synth.num_classes;
    if (o->o_ipc->count()) cfg.synth.images_per_class = o->cfg.synth.images_per_class;
    if (o->o_size->count()) cfg.synth.image_size = o->cfg.synth.image_size;
    if (o->o_noise->count()) cfg.synth.label_noise_rate = o->cfg.synth.label_noise_rate;
    if (o->o_outlier->count()) cfg.synth.outlier_rate = o->cfg.synth.outlier_rate;
    PipelineResult result = run_pipeline(cfg, g.workdir);
    emit({{"stages_run", result.stages_run},
          {"stages_skipped", result.stages_skipped},
          {"summary", result.summary_path}},
         "");
  });
}

void add_validate_manifest(CLI::App& app, const GlobalArgs& g) {
  struct Opts {
    std::string manifest;
    bool check_rasters = false;
  };
  auto o = std::make_shared<Opts>();
  CLI::App* sub = app.add_subcommand("validate-manifest", "structural checks on a manifest");
  sub->add_option("--manifest", o->manifest)->required();
  sub->add_flag("--check-rasters", o->check_rasters, "also open every raster and verify sizes");
  sub->callback([o, &g] {
    std::string path = resolve(g, o->manifest);
    DatasetManifest m = load_manifest(path);
    validate_manifest(m);
    if (o->check_rasters) {
      std::string base = fs::path(path).parent_path().string();
      if (base.empty()) base = ".";
      for (const auto& rec : m.records) {
        ImageRaster img = read_ppm((fs::path(base) / rec.raster_path).string());
        if (img.width != rec.width || img.height != rec.height) {
          throw MalformedFile("record " + rec.id + ": raster is " +
                              std::to_string(img.width) + "x" + std::to_string(img.height) +
                              ", manifest says " + std::to_string(rec.width) + "x" +
                              std::to_string(rec.height));
        }
      }
    }
    emit({{"ok", true}, {"records", m.records.size()}, {"num_classes", m.num_classes}}, "");
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dataset curation toolkit: measure collection bias and cut it out"};
  app.require_subcommand(1);

  GlobalArgs g;
  const char* env_wd = std::getenv("DEBIASKIT_WORKDIR");
  if (env_wd != nullptr && *env_wd != '\0') g.workdir = env_wd;
  app.add_option("--workdir", g.workdir, "base directory for relative paths")
      ->capture_default_str()
      ->envname("DEBIASKIT_WORKDIR");

  add_gen_synth(app, g);
  add_build_weakboxes(app, g);
  add_train_detector(app, g);
  add_detect(app, g);
  add_train_classifier(app, g);
  add_debias(app, g);
  add_metrics_scale_density(app, g);
  add_metrics_ntd(app, g);
  add_metrics_crossgen(app, g);
  add_metrics_labelquality(app, g);
  add_sweep(app, g);
  add_pipeline(app, g);
  add_validate_manifest(app, g);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const Error& e) {
    json j = {{"error", e.kind()}, {"message", e.what()}};
    std::cerr << j.dump() << "\n";
    return (e.kind() == "ConfigError" || e.kind() == "SpecInvalid") ? 2 : 3;
  } catch (const std::exception& e) {
    json j = {{"error", "Unexpected"}, {"message", e.what()}};
    std::cerr << j.dump() << "\n";
    return 3;
  }
  return 0;
}
