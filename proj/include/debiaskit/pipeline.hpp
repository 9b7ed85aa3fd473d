#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "debiaskit/classifier.hpp"
#include "debiaskit/debias.hpp"
#include "debiaskit/detector.hpp"
#include "debiaskit/synthgen.hpp"
#include "debiaskit/weaksup.hpp"

namespace debiaskit {

// Which proposal engine the pipeline builds, and its knobs. The oracle reads
// planted truth from the manifest (for calibration and tests); the template
// matcher learns per-class appearance from weak crops.
struct DetectorConfig {
  DetectorKind kind = DetectorKind::template_match;
  double score_floor = kDefaultTemplateScoreFloor;
  int oracle_jitter_px = 0;
  double oracle_score_noise = 0.0;
};

// Everything a full run needs. One master seed feeds every stage through
// fixed per-stage offsets, so the per-module seed fields in SynthSpec and
// TrainConfig are derived, not read from the file.
struct PipelineConfig {
  std::uint64_t seed = 1;
  int jobs = 1;
  SynthSpec synth;
  WeakBoxConfig weak;
  DetectorConfig detector;
  ConstraintConfig constraints;
  TrainConfig train;
  std::vector<double> ntd_fractions = {0.1, 0.25, 0.5, 0.75, 1.0};
};

PipelineConfig default_pipeline_config();

// Reads a JSON file shaped like PipelineConfig (nested objects "synth",
// "weak", "detector", "constraints", "train", "metrics"). Missing keys keep
// their defaults; unknown keys anywhere are a ConfigError so a typo cannot
// silently fall back to a default.
PipelineConfig load_pipeline_config(const std::string& path);

void validate_pipeline_config(const PipelineConfig& config);  // throws ConfigError

// Content digests for change detection between runs. Directories hash file
// names plus contents in sorted relative-path order. Throws MalformedFile
// when the path does not exist.
std::uint64_t digest_file(const std::string& path);
std::uint64_t digest_path(const std::string& path);
std::string digest_hex(std::uint64_t digest);

// Writes bytes to path via a ".partial" sibling and an atomic rename, so an
// interrupted run never leaves a truncated file a resume would trust.
void atomic_write_file(const std::string& path, const std::string& bytes);

struct LedgerEntry {
  std::string stage;
  std::uint64_t params_digest = 0;
  std::map<std::string, std::uint64_t> inputs;   // workdir-relative path -> digest
  std::map<std::string, std::uint64_t> outputs;
  std::int64_t wall_ms = 0;
};

// Append-only record of completed stages (ledger.jsonl in the workdir). A
// stage whose latest entry still matches its params, inputs, and on-disk
// outputs is skipped on the next run. Wall times are informational only and
// excluded from any determinism comparison.
class RunLedger {
public:
  explicit RunLedger(std::string path);  // loads existing entries when present
  const LedgerEntry* find(const std::string& stage) const;  // latest entry or null
  void append(const LedgerEntry& entry);

private:
  std::string path_;
  std::vector<LedgerEntry> entries_;
};

struct PipelineResult {
  std::vector<std::string> stages_run;
  std::vector<std::string> stages_skipped;
  std::string summary_path;  // workdir-relative
};

// Sizes of the generated corpora, by manifest file name (without .jsonl).
struct CorporaSizes {
  std::size_t standard = 0;
  std::size_t standard_test = 0;
  std::size_t web = 0;
};

// Stage one of the pipeline, callable standalone: synthesizes the standard,
// held-out test, and web corpora into workdir (manifests at the root, PPM
// rasters under rasters/). Seeds derive from config.seed.
CorporaSizes generate_corpora(const PipelineConfig& config, const std::string& workdir);

// Runs the whole chain inside workdir: synthesize the paired corpora, build
// weak supervision, train region and object detectors plus the tag
// classifier, debias the web set, train the augmented downstream classifier,
// and measure everything into reports/ plus a machine-readable summary.json.
// Re-running with the same config skips satisfied stages via the ledger.
PipelineResult run_pipeline(const PipelineConfig& config, const std::string& workdir);

}  // namespace debiaskit
