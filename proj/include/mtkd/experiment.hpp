#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mtkd/data.hpp"
#include "mtkd/distill.hpp"
#include "mtkd/metrics.hpp"
#include "mtkd/model.hpp"

namespace mtkd {

struct TrainingPreset {
  std::string name = "desk";
  int epochs = 50;
  double learning_rate = 1e-2;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  int batch_size = 32;

  /// Desk-scale defaults: epochs=50, lr=1e-2, adam, batch=32.
  static TrainingPreset desk();
  /// Source hyperparameters kept for fidelity: epochs=20, lr=3e-5, batch=32.
  /// Too small a rate to train the desk classifier from scratch.
  static TrainingPreset paper();

  void validate() const;
};

/// The five training/evaluation regimes.
///   ft-mono: per-language cross-entropy model (doubles as the teacher)
///   ft-multi: cross-entropy on the concatenated languages
///   kd-mono: per-language student distilling from the ft-multi model
///   mtkd-mono: per-language student with all per-language teachers
///   mtkd-multi: multilingual student with all per-language teachers
enum class Paradigm { kFtMono, kFtMulti, kKdMono, kMtkdMono, kMtkdMulti };

std::string to_string(Paradigm paradigm);
std::optional<Paradigm> parse_paradigm(const std::string& name);
const std::vector<Paradigm>& all_paradigms();

struct ExperimentConfig {
  // Data source: a JSONL path wins; otherwise the generator spec is used.
  std::string dataset_path;
  std::optional<GeneratorSpec> generator;

  std::vector<int> hidden_dims = {64, 64};
  TrainingPreset training;
  DistillConfig distill;
  std::vector<Paradigm> paradigms;
  std::vector<std::string> languages;  // empty = every dataset language
  std::optional<int> split_id;         // empty = rotate over all valid ids
  std::uint64_t master_seed = 1;
  std::string out_dir;                 // empty = keep results in memory only
  std::string teacher_dir;             // load teacher checkpoints instead of training
  int bootstrap_resamples = 1000;
  double confidence = 0.95;
  bool self_check = true;
  bool parallel = false;
  bool write_diagnostics = true;

  /// Canonical "key=value" listing of every semantically meaningful field
  /// (output locations and the parallel switch are excluded; they cannot
  /// change results). Whitespace and ordering of the user's config file
  /// never reach this form.
  std::string canonical_text() const;
  std::array<std::uint8_t, 32> digest() const;
  std::string digest_hex() const;
};

/// Receives every per-sample diagnostics record the training loop produces.
using DiagnosticsSink = std::function<void(
    int epoch, std::int64_t step, const LabeledSample& sample,
    const MtkdDiagnostics& diag)>;

struct TrainPlan {
  std::vector<Index> layer_dims;  // full stack including input and output
  LossParadigm loss = LossParadigm::kFt;
  DistillConfig distill;
  TrainingPreset preset;
  std::uint64_t init_seed = 0;
  std::uint64_t shuffle_seed = 0;
  bool self_check = true;
};

struct TrainOutcome {
  Classifier model;
  std::int64_t steps = 0;
  std::int64_t self_checks = 0;
};

/// Deterministic training loop: epoch-shuffled batches, one optimizer step
/// per batch, evaluation left to the caller. With self_check enabled, the
/// first batch of every epoch re-derives the distillation loss through the
/// degenerate routes (lambda=0 vs plain cross-entropy, single-teacher
/// multi-teacher vs kd) and throws std::logic_error on any mismatch.
TrainOutcome train_classifier(const TrainPlan& plan,
                              const std::vector<LabeledSample>& train_samples,
                              const std::vector<Classifier>& teachers,
                              const DiagnosticsSink& sink = nullptr);

struct RunRow {
  Paradigm paradigm = Paradigm::kFtMono;
  std::string language;  // evaluation language
  int split_id = 0;
  MetricReport metrics;
  std::string checkpoint_path;
};

struct RunRecord {
  std::string config_digest;
  std::string tool_version;
  double duration_seconds = 0.0;
  std::int64_t self_checks = 0;
  std::vector<RunRow> rows;
  std::vector<std::string> checkpoint_paths;
};

/// Point metrics plus bootstrap intervals for one model on one test set.
/// Per-metric bootstrap seeds are derived from bootstrap_seed by metric name.
MetricReport evaluate_model(const Classifier& model,
                            const std::vector<LabeledSample>& test_samples,
                            Index class_count, int bootstrap_resamples,
                            double confidence, std::uint64_t bootstrap_seed);

/// Runs every configured paradigm over the configured splits with shared
/// data and seed lineage, evaluates per language, and (when out_dir is set)
/// writes report.csv, report.txt, run.json, checkpoints, confusion matrices,
/// and final-epoch diagnostics streams.
RunRecord run_experiment(const ExperimentConfig& cfg);

std::string run_record_to_json(const RunRecord& record);
RunRecord run_record_from_json(const std::string& text);

/// Re-renders report.csv / report.txt content from a run record.
RenderedReport render_run_record(const RunRecord& record);

}  // namespace mtkd
