#include "mtkd/experiment.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <sstream>

#include "json.hpp"

#include "mtkd/digest.hpp"
#include "mtkd/rng.hpp"
#include "mtkd/version.hpp"

namespace mtkd {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

bool bits_equal(double a, double b) {
  return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b);
}

bool bits_equal(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) return false;
  for (Index i = 0; i < a.size(); ++i) {
    if (!bits_equal(a[i], b[i])) return false;
  }
  return true;
}

}  // namespace

TrainingPreset TrainingPreset::desk() {
  return TrainingPreset{"desk", 50, 1e-2, OptimizerKind::kAdam, 32};
}

TrainingPreset TrainingPreset::paper() {
  return TrainingPreset{"paper", 20, 3e-5, OptimizerKind::kAdam, 32};
}

void TrainingPreset::validate() const {
  if (epochs < 1) {
    throw ConfigError("training: epochs must be >= 1");
  }
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("training: learning rate must be > 0");
  }
  if (batch_size < 1) {
    throw ConfigError("training: batch size must be >= 1");
  }
}

std::string to_string(Paradigm paradigm) {
  switch (paradigm) {
    case Paradigm::kFtMono: return "ft-mono";
    case Paradigm::kFtMulti: return "ft-multi";
    case Paradigm::kKdMono: return "kd-mono";
    case Paradigm::kMtkdMono: return "mtkd-mono";
    case Paradigm::kMtkdMulti: return "mtkd-multi";
  }
  throw std::logic_error("to_string(Paradigm): unreachable");
}

std::optional<Paradigm> parse_paradigm(const std::string& name) {
  for (Paradigm p : all_paradigms()) {
    if (to_string(p) == name) return p;
  }
  return std::nullopt;
}

const std::vector<Paradigm>& all_paradigms() {
  static const std::vector<Paradigm> kAll = {
      Paradigm::kFtMono, Paradigm::kFtMulti, Paradigm::kKdMono,
      Paradigm::kMtkdMono, Paradigm::kMtkdMulti};
  return kAll;
}

std::string ExperimentConfig::canonical_text() const {
  std::ostringstream out;
  out << "bootstrap_resamples=" << bootstrap_resamples << "\n";
  out << "confidence=" << format_double(confidence) << "\n";
  out << "dataset_path=" << dataset_path << "\n";
  out << "distill.kl_direction="
      << (distill.kl_direction == KlDirection::kStudentToTeacher
              ? "student_to_teacher"
              : "teacher_to_student")
      << "\n";
  out << "distill.lambda=" << format_double(distill.lambda) << "\n";
  out << "distill.sharpen_tau=" << format_double(distill.sharpen_tau) << "\n";
  out << "distill.smooth_temperature=" << format_double(distill.smooth_temperature)
      << "\n";
  out << "distill.t_squared_rescale=" << (distill.t_squared_rescale ? 1 : 0)
      << "\n";
  if (generator.has_value() && dataset_path.empty()) {
    const GeneratorSpec& g = *generator;
    out << "generator.class_count=" << g.class_count << "\n";
    out << "generator.class_mean_spacing=" << format_double(g.class_mean_spacing)
        << "\n";
    out << "generator.class_means=";
    for (Index i = 0; i < g.class_means.size(); ++i) {
      if (i > 0) out << ",";
      out << format_double(g.class_means(i / g.class_means.cols(),
                                         i % g.class_means.cols()));
    }
    out << "\n";
    out << "generator.class_names=";
    for (std::size_t i = 0; i < g.class_names.size(); ++i) {
      out << (i ? "," : "") << g.class_names[i];
    }
    out << "\n";
    out << "generator.feature_dim=" << g.feature_dim << "\n";
    out << "generator.language_rotation_dims=" << g.language_rotation_dims << "\n";
    out << "generator.language_shift_norm=" << format_double(g.language_shift_norm)
        << "\n";
    out << "generator.languages=";
    for (std::size_t i = 0; i < g.languages.size(); ++i) {
      out << (i ? "," : "") << g.languages[i];
    }
    out << "\n";
    out << "generator.layouts=";
    for (std::size_t li = 0; li < g.layouts.size(); ++li) {
      if (li > 0) out << ";";
      out << g.layouts[li].split_count << ":";
      for (std::size_t r = 0; r < g.layouts[li].per_split_class_counts.size(); ++r) {
        if (r > 0) out << "|";
        const auto& row = g.layouts[li].per_split_class_counts[r];
        for (std::size_t c = 0; c < row.size(); ++c) {
          out << (c ? "," : "") << row[c];
        }
      }
    }
    out << "\n";
    out << "generator.master_seed=" << g.master_seed << "\n";
    out << "generator.mean_geometry="
        << (g.mean_geometry == MeanGeometry::kSpread ? "spread"
                                                     : "confusable-pairs")
        << "\n";
    out << "generator.sigma=" << format_double(g.sigma) << "\n";
  }
  out << "hidden_dims=";
  for (std::size_t i = 0; i < hidden_dims.size(); ++i) {
    out << (i ? "," : "") << hidden_dims[i];
  }
  out << "\n";
  out << "languages=";
  for (std::size_t i = 0; i < languages.size(); ++i) {
    out << (i ? "," : "") << languages[i];
  }
  out << "\n";
  out << "master_seed=" << master_seed << "\n";
  out << "paradigms=";
  for (std::size_t i = 0; i < paradigms.size(); ++i) {
    out << (i ? "," : "") << to_string(paradigms[i]);
  }
  out << "\n";
  out << "self_check=" << (self_check ? 1 : 0) << "\n";
  out << "split=" << (split_id.has_value() ? std::to_string(*split_id) : "all")
      << "\n";
  out << "teacher_dir=" << teacher_dir << "\n";
  out << "training.batch_size=" << training.batch_size << "\n";
  out << "training.epochs=" << training.epochs << "\n";
  out << "training.learning_rate=" << format_double(training.learning_rate) << "\n";
  out << "training.optimizer="
      << (training.optimizer == OptimizerKind::kAdam ? "adam" : "sgd") << "\n";
  return out.str();
}

std::array<std::uint8_t, 32> ExperimentConfig::digest() const {
  return sha256_bytes(canonical_text());
}

std::string ExperimentConfig::digest_hex() const { return hex_string(digest()); }

namespace {

// Re-derives the degenerate loss routes for one sample and insists they
// agree bit for bit: lambda=0 against plain cross-entropy, and the
// single-teacher multi-teacher path against kd. Returns the number of
// identities exercised.
std::int64_t self_check_sample(const LogitVector& student_logits,
                               const std::vector<LogitVector>& teacher_logits,
                               Index label, const DistillConfig& cfg) {
  std::int64_t checks = 0;

  DistillConfig zero = cfg;
  zero.lambda = 0.0;
  const std::vector<LogitVector> stand_in_teachers =
      teacher_logits.empty() ? std::vector<LogitVector>{student_logits}
                             : teacher_logits;
  const LossResult degenerate =
      mtkd_loss(student_logits, stand_in_teachers, label, zero);
  const FtLossResult plain = ft_loss(student_logits, label);
  if (!bits_equal(degenerate.loss, plain.loss) ||
      !bits_equal(degenerate.grad, plain.grad)) {
    throw std::logic_error(
        "self-check failed: lambda=0 loss does not reduce to cross-entropy");
  }
  ++checks;

  if (!teacher_logits.empty()) {
    const LossResult via_kd = kd_loss(student_logits, teacher_logits[0], label, cfg);
    const LossResult via_mtkd =
        mtkd_loss(student_logits, {teacher_logits[0]}, label, cfg);
    if (!bits_equal(via_kd.loss, via_mtkd.loss) ||
        !bits_equal(via_kd.grad, via_mtkd.grad) ||
        !bits_equal(via_kd.diag.teacher_weights, via_mtkd.diag.teacher_weights) ||
        !bits_equal(via_kd.diag.per_teacher_kl, via_mtkd.diag.per_teacher_kl)) {
      throw std::logic_error(
          "self-check failed: single-teacher path does not reduce to kd");
    }
    ++checks;
  }
  return checks;
}

}  // namespace

TrainOutcome train_classifier(const TrainPlan& plan,
                              const std::vector<LabeledSample>& train_samples,
                              const std::vector<Classifier>& teachers,
                              const DiagnosticsSink& sink) {
  plan.preset.validate();
  plan.distill.validate();
  if (train_samples.empty()) {
    throw std::invalid_argument("train_classifier: empty training set");
  }

  TrainOutcome outcome;
  outcome.model = init_classifier(plan.layer_dims, plan.init_seed);
  OptimizerState opt = plan.preset.optimizer == OptimizerKind::kAdam
                           ? OptimizerState::adam(plan.preset.learning_rate)
                           : OptimizerState::sgd(plan.preset.learning_rate);

  for (int epoch = 0; epoch < plan.preset.epochs; ++epoch) {
    const auto batches =
        make_batches(train_samples, static_cast<std::size_t>(plan.preset.batch_size),
                     plan.shuffle_seed, epoch);
    bool first_batch = true;
    for (const auto& batch : batches) {
      const BatchLossResult r =
          batch_loss(plan.loss, outcome.model, teachers, batch, plan.distill);
      if (plan.self_check && first_batch) {
        for (const LabeledSample& sample : batch) {
          const LogitVector student_logits = forward(outcome.model, sample.features);
          std::vector<LogitVector> teacher_logits;
          teacher_logits.reserve(teachers.size());
          for (const Classifier& t : teachers) {
            teacher_logits.push_back(forward(t, sample.features));
          }
          outcome.self_checks +=
              self_check_sample(student_logits, teacher_logits, sample.label,
                                plan.distill);
        }
        first_batch = false;
      }
      if (sink) {
        for (std::size_t i = 0; i < batch.size(); ++i) {
          sink(epoch, outcome.steps, batch[i], r.per_sample[i]);
        }
      }
      optimizer_step(outcome.model, r.grads, opt);
      outcome.steps += 1;
    }
  }
  return outcome;
}

namespace {

std::vector<Index> predict(const Classifier& model,
                           const std::vector<LabeledSample>& samples) {
  std::vector<Index> preds;
  preds.reserve(samples.size());
  for (const LabeledSample& s : samples) {
    const LogitVector logits = forward(model, s.features);
    Index best = 0;
    logits.maxCoeff(&best);
    preds.push_back(best);
  }
  return preds;
}

void attach_cis(MetricReport& report, const std::vector<Index>& preds,
                const std::vector<Index>& labels, int n_resamples,
                double confidence, std::uint64_t bootstrap_seed) {
  if (n_resamples == 0) return;
  for (MetricKind kind :
       {MetricKind::kUr, MetricKind::kWr, MetricKind::kUa, MetricKind::kWa}) {
    const BootstrapResult b =
        bootstrap_ci(preds, labels, kind, n_resamples,
                     derive_seed(bootstrap_seed, to_string(kind)), confidence);
    report.ci[to_string(kind)] = {b.lower, b.upper};
  }
}

}  // namespace

MetricReport evaluate_model(const Classifier& model,
                            const std::vector<LabeledSample>& test_samples,
                            Index class_count, int bootstrap_resamples,
                            double confidence, std::uint64_t bootstrap_seed) {
  if (test_samples.empty()) {
    throw std::invalid_argument("evaluate_model: empty test set");
  }
  const std::vector<Index> preds = predict(model, test_samples);
  std::vector<Index> labels;
  labels.reserve(test_samples.size());
  for (const LabeledSample& s : test_samples) labels.push_back(s.label);
  MetricReport report = compute_metrics(confusion(preds, labels, class_count));
  attach_cis(report, preds, labels, bootstrap_resamples, confidence,
             bootstrap_seed);
  return report;
}

namespace {

struct SplitResult {
  std::vector<RunRow> rows;
  std::vector<std::string> checkpoints;
  std::int64_t self_checks = 0;
};

struct RunContext {
  const ExperimentConfig& cfg;
  const Dataset& dataset;
  std::vector<std::string> scope;  // languages under evaluation
  std::vector<Index> layer_dims;
  std::string digest_hex;
  std::array<std::uint8_t, 32> digest_bytes;
  fs::path out_dir;  // empty when no artifacts requested
};

std::string split_tag(int split_id) { return "split" + std::to_string(split_id); }

void check_teacher_shape(const Classifier& teacher, const RunContext& ctx,
                         const std::string& what) {
  if (teacher.input_dim() != ctx.dataset.manifest.feature_dim ||
      teacher.class_count() != ctx.dataset.manifest.class_count) {
    throw DataError(what + ": teacher input/class dims do not match the dataset");
  }
}

void write_text_file(const fs::path& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) {
    throw DataError("cannot open output file " + path.string());
  }
  f << content;
  if (!f) {
    throw DataError("write failed for " + path.string());
  }
}

// Opens a JSONL diagnostics stream that keeps final-epoch records only.
class DiagnosticsFile {
 public:
  DiagnosticsFile(const fs::path& path, int final_epoch)
      : stream_(path, std::ios::binary | std::ios::trunc),
        final_epoch_(final_epoch) {
    if (!stream_) {
      throw DataError("cannot open diagnostics file " + path.string());
    }
  }

  void write(int epoch, std::int64_t step, const LabeledSample& sample,
             const MtkdDiagnostics& diag) {
    if (epoch != final_epoch_) return;
    stream_ << diagnostics_json_line(step, sample.id, sample.language, diag)
            << '\n';
  }

 private:
  std::ofstream stream_;
  int final_epoch_;
};

class SplitRunner {
 public:
  SplitRunner(const RunContext& ctx, int split_id)
      : ctx_(ctx), split_id_(split_id) {}

  SplitResult run() {
    for (Paradigm paradigm : ctx_.cfg.paradigms) {
      switch (paradigm) {
        case Paradigm::kFtMono:
          for (const std::string& lang : ctx_.scope) {
            add_row(paradigm, lang, teacher(lang),
                    teacher_checkpoint_path(lang));
          }
          break;
        case Paradigm::kFtMulti:
          for (const std::string& lang : ctx_.scope) {
            add_row(paradigm, lang, ft_multi(), ft_multi_path_);
          }
          break;
        case Paradigm::kKdMono:
          for (const std::string& lang : ctx_.scope) {
            const Classifier student = train_student(
                paradigm, LossParadigm::kKd, {ft_multi()}, lang);
            add_row(paradigm, lang, student, student_paths_[key(paradigm, lang)]);
          }
          break;
        case Paradigm::kMtkdMono:
          for (const std::string& lang : ctx_.scope) {
            const Classifier student = train_student(
                paradigm, LossParadigm::kMtkd, all_teachers(), lang);
            add_row(paradigm, lang, student, student_paths_[key(paradigm, lang)]);
          }
          break;
        case Paradigm::kMtkdMulti: {
          const Classifier student = train_student(
              paradigm, LossParadigm::kMtkd, all_teachers(), std::nullopt);
          for (const std::string& lang : ctx_.scope) {
            add_row(paradigm, lang, student, student_paths_[key(paradigm, "")]);
          }
          break;
        }
      }
    }
    return std::move(result_);
  }

 private:
  std::string key(Paradigm paradigm, const std::string& lang) const {
    return to_string(paradigm) + ":" + lang;
  }

  std::vector<LabeledSample> train_set(const std::optional<std::string>& lang) {
    if (lang.has_value()) {
      return select_split(ctx_.dataset, lang, split_id_, SplitRole::kTrain);
    }
    // Multilingual set: per-language selections concatenated in scope order.
    std::vector<LabeledSample> out;
    for (const std::string& l : ctx_.scope) {
      auto part = select_split(ctx_.dataset, l, split_id_, SplitRole::kTrain);
      out.insert(out.end(), part.begin(), part.end());
    }
    return out;
  }

  std::string teacher_checkpoint_name(const std::string& lang) const {
    return "teacher-" + lang + "-" + split_tag(split_id_) + ".ckpt";
  }

  std::string teacher_checkpoint_path(const std::string& lang) const {
    if (!ctx_.cfg.teacher_dir.empty()) {
      return (fs::path(ctx_.cfg.teacher_dir) / teacher_checkpoint_name(lang))
          .string();
    }
    if (ctx_.out_dir.empty()) return "";
    return (ctx_.out_dir / "checkpoints" / teacher_checkpoint_name(lang)).string();
  }

  const Classifier& teacher(const std::string& lang) {
    auto it = teachers_.find(lang);
    if (it != teachers_.end()) return it->second;

    if (!ctx_.cfg.teacher_dir.empty()) {
      const fs::path path =
          fs::path(ctx_.cfg.teacher_dir) / teacher_checkpoint_name(lang);
      if (!fs::exists(path)) {
        throw DataError("missing teacher checkpoint " + path.string());
      }
      Checkpoint ckpt = load_checkpoint(path);
      check_teacher_shape(ckpt.model, ctx_, "teacher " + lang);
      return teachers_.emplace(lang, std::move(ckpt.model)).first->second;
    }

    TrainPlan plan = base_plan(LossParadigm::kFt);
    plan.init_seed = derive_seed(ctx_.cfg.master_seed,
                                 "init:mono:" + lang + ":" + split_tag(split_id_));
    plan.shuffle_seed = derive_seed(
        ctx_.cfg.master_seed, "shuffle:mono:" + lang + ":" + split_tag(split_id_));
    DiagnosticsSink sink = paradigm_sink(Paradigm::kFtMono, lang);
    const TrainOutcome outcome =
        train_classifier(plan, train_set(lang), {}, sink);
    result_.self_checks += outcome.self_checks;
    save_model(outcome.model, teacher_checkpoint_name(lang), lang, plan.init_seed);
    return teachers_.emplace(lang, outcome.model).first->second;
  }

  std::vector<Classifier> all_teachers() {
    std::vector<Classifier> out;
    for (const std::string& lang : ctx_.scope) out.push_back(teacher(lang));
    return out;
  }

  const Classifier& ft_multi() {
    if (ft_multi_.has_value()) return *ft_multi_;

    const std::string name = "ft-multi-" + split_tag(split_id_) + ".ckpt";
    if (!ctx_.cfg.teacher_dir.empty()) {
      const fs::path path = fs::path(ctx_.cfg.teacher_dir) / name;
      if (fs::exists(path)) {
        Checkpoint ckpt = load_checkpoint(path);
        check_teacher_shape(ckpt.model, ctx_, "ft-multi teacher");
        ft_multi_ = std::move(ckpt.model);
        ft_multi_path_ = path.string();
        return *ft_multi_;
      }
    }

    TrainPlan plan = base_plan(LossParadigm::kFt);
    plan.init_seed =
        derive_seed(ctx_.cfg.master_seed, "init:multi:" + split_tag(split_id_));
    plan.shuffle_seed =
        derive_seed(ctx_.cfg.master_seed, "shuffle:multi:" + split_tag(split_id_));
    DiagnosticsSink sink = paradigm_sink(Paradigm::kFtMulti, std::nullopt);
    const TrainOutcome outcome =
        train_classifier(plan, train_set(std::nullopt), {}, sink);
    result_.self_checks += outcome.self_checks;
    ft_multi_ = outcome.model;
    ft_multi_path_ = save_model(outcome.model, name, "multi", plan.init_seed);
    return *ft_multi_;
  }

  Classifier train_student(Paradigm paradigm, LossParadigm loss,
                           const std::vector<Classifier>& teachers,
                           const std::optional<std::string>& lang) {
    TrainPlan plan = base_plan(loss);
    if (lang.has_value()) {
      plan.init_seed = derive_seed(
          ctx_.cfg.master_seed, "init:mono:" + *lang + ":" + split_tag(split_id_));
      plan.shuffle_seed =
          derive_seed(ctx_.cfg.master_seed,
                      "shuffle:mono:" + *lang + ":" + split_tag(split_id_));
    } else {
      plan.init_seed =
          derive_seed(ctx_.cfg.master_seed, "init:multi:" + split_tag(split_id_));
      plan.shuffle_seed =
          derive_seed(ctx_.cfg.master_seed, "shuffle:multi:" + split_tag(split_id_));
    }
    DiagnosticsSink sink = paradigm_sink(paradigm, lang);
    const TrainOutcome outcome =
        train_classifier(plan, train_set(lang), teachers, sink);
    result_.self_checks += outcome.self_checks;

    const std::string name = to_string(paradigm) +
                             (lang.has_value() ? "-" + *lang : "") + "-" +
                             split_tag(split_id_) + ".ckpt";
    student_paths_[key(paradigm, lang.value_or(""))] =
        save_model(outcome.model, name, lang.value_or("multi"), plan.init_seed);
    return outcome.model;
  }

  TrainPlan base_plan(LossParadigm loss) const {
    TrainPlan plan;
    plan.layer_dims = ctx_.layer_dims;
    plan.loss = loss;
    plan.distill = ctx_.cfg.distill;
    plan.preset = ctx_.cfg.training;
    plan.self_check = ctx_.cfg.self_check;
    return plan;
  }

  // Streams final-epoch diagnostics for a paradigm's training run, if that
  // paradigm was requested and artifacts are enabled.
  DiagnosticsSink paradigm_sink(Paradigm paradigm,
                                const std::optional<std::string>& lang) {
    const bool requested =
        std::find(ctx_.cfg.paradigms.begin(), ctx_.cfg.paradigms.end(), paradigm) !=
        ctx_.cfg.paradigms.end();
    if (!requested || ctx_.out_dir.empty() || !ctx_.cfg.write_diagnostics) {
      return nullptr;
    }
    const std::string name = to_string(paradigm) +
                             (lang.has_value() ? "-" + *lang : "") + "-" +
                             std::to_string(split_id_) + ".jsonl";
    auto file = std::make_shared<DiagnosticsFile>(ctx_.out_dir / "diag" / name,
                                                  ctx_.cfg.training.epochs - 1);
    return [file](int epoch, std::int64_t step, const LabeledSample& sample,
                  const MtkdDiagnostics& diag) {
      file->write(epoch, step, sample, diag);
    };
  }

  std::string save_model(const Classifier& model, const std::string& name,
                         const std::string& language_tag, std::uint64_t seed) {
    if (ctx_.out_dir.empty()) return "";
    Checkpoint ckpt;
    ckpt.model = model;
    ckpt.language_tag = language_tag;
    ckpt.seed = seed;
    ckpt.config_digest = ctx_.digest_bytes;
    const fs::path path = ctx_.out_dir / "checkpoints" / name;
    save_checkpoint(ckpt, path);
    result_.checkpoints.push_back(path.string());
    return path.string();
  }

  void add_row(Paradigm paradigm, const std::string& lang, const Classifier& model,
               const std::string& checkpoint_path) {
    const auto test = select_split(ctx_.dataset, lang, split_id_, SplitRole::kTest);
    const std::uint64_t bootstrap_seed =
        derive_seed(ctx_.cfg.master_seed, "bootstrap:" + to_string(paradigm) + ":" +
                                              lang + ":" + split_tag(split_id_));
    const std::vector<Index> preds = predict(model, test);
    std::vector<Index> labels;
    labels.reserve(test.size());
    for (const LabeledSample& s : test) labels.push_back(s.label);

    const ConfusionMatrix cm =
        confusion(preds, labels, ctx_.dataset.manifest.class_count);
    MetricReport report = compute_metrics(cm);
    attach_cis(report, preds, labels, ctx_.cfg.bootstrap_resamples,
               ctx_.cfg.confidence, bootstrap_seed);
    report.paradigm = to_string(paradigm);
    report.language = lang;
    report.split_label = std::to_string(split_id_);

    if (!ctx_.out_dir.empty()) {
      json j;
      j["class_names"] = ctx_.dataset.manifest.class_names;
      std::vector<std::vector<std::int64_t>> counts;
      for (Index r = 0; r < cm.counts.rows(); ++r) {
        counts.emplace_back(cm.counts.row(r).begin(), cm.counts.row(r).end());
      }
      j["counts"] = counts;
      write_text_file(ctx_.out_dir / "confusion" /
                          (to_string(paradigm) + "-" + lang + "-" +
                           std::to_string(split_id_) + ".json"),
                      j.dump(2) + "\n");
    }

    RunRow row;
    row.paradigm = paradigm;
    row.language = lang;
    row.split_id = split_id_;
    row.metrics = std::move(report);
    row.checkpoint_path = checkpoint_path;
    result_.rows.push_back(std::move(row));
  }

  const RunContext& ctx_;
  int split_id_;
  SplitResult result_;
  std::map<std::string, Classifier> teachers_;
  std::optional<Classifier> ft_multi_;
  std::string ft_multi_path_;
  std::map<std::string, std::string> student_paths_;
};

json metrics_to_json(const MetricReport& m) {
  json j;
  j["UR"] = m.ur;
  j["WR"] = m.wr;
  j["UA"] = m.ua;
  j["WA"] = m.wa;
  j["per_class_recall"] = m.per_class_recall;
  j["n_samples"] = m.n_samples;
  j["zero_support_classes"] = m.zero_support_classes;
  json ci = json::object();
  for (const auto& [name, bounds] : m.ci) {
    ci[name] = {bounds.first, bounds.second};
  }
  j["ci"] = ci;
  return j;
}

MetricReport metrics_from_json(const json& j) {
  MetricReport m;
  m.ur = j.at("UR").get<double>();
  m.wr = j.at("WR").get<double>();
  m.ua = j.at("UA").get<double>();
  m.wa = j.at("WA").get<double>();
  m.per_class_recall = j.at("per_class_recall").get<std::vector<double>>();
  m.n_samples = j.at("n_samples").get<std::int64_t>();
  m.zero_support_classes = j.at("zero_support_classes").get<std::vector<Index>>();
  for (const auto& [name, bounds] : j.at("ci").items()) {
    m.ci[name] = {bounds.at(0).get<double>(), bounds.at(1).get<double>()};
  }
  return m;
}

}  // namespace

RunRecord run_experiment(const ExperimentConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  if (cfg.paradigms.empty()) {
    throw ConfigError("run_experiment: no paradigms selected");
  }
  cfg.training.validate();
  cfg.distill.validate();
  if (cfg.bootstrap_resamples < 0) {
    throw ConfigError("run_experiment: bootstrap resamples must be >= 0");
  }
  for (int h : cfg.hidden_dims) {
    if (h < 1) throw ConfigError("run_experiment: hidden dims must be >= 1");
  }

  Dataset dataset;
  if (!cfg.dataset_path.empty()) {
    dataset = load_jsonl(cfg.dataset_path);
  } else if (cfg.generator.has_value()) {
    dataset = generate_dataset(*cfg.generator);
  } else {
    throw ConfigError("run_experiment: no dataset source configured");
  }

  RunContext ctx{cfg, dataset, {}, {}, cfg.digest_hex(), cfg.digest(), {}};
  if (cfg.languages.empty()) {
    ctx.scope = dataset.manifest.languages;
  } else {
    for (const std::string& lang : cfg.languages) {
      if (!dataset.manifest.has_language(lang)) {
        throw DataError("run_experiment: dataset has no language '" + lang + "'");
      }
    }
    ctx.scope = cfg.languages;
  }
  ctx.layer_dims.push_back(dataset.manifest.feature_dim);
  for (int h : cfg.hidden_dims) ctx.layer_dims.push_back(h);
  ctx.layer_dims.push_back(dataset.manifest.class_count);

  int rotations = 0;
  for (const std::string& lang : ctx.scope) {
    const int valid = rotation_count(dataset, lang);
    rotations = rotations == 0 ? valid : std::min(rotations, valid);
  }
  std::vector<int> split_ids;
  if (cfg.split_id.has_value()) {
    if (*cfg.split_id < 0 || *cfg.split_id >= rotations) {
      throw ConfigError("run_experiment: split id " + std::to_string(*cfg.split_id) +
                        " not valid for every selected language");
    }
    split_ids.push_back(*cfg.split_id);
  } else {
    for (int s = 0; s < rotations; ++s) split_ids.push_back(s);
  }

  if (!cfg.out_dir.empty()) {
    ctx.out_dir = fs::path(cfg.out_dir);
    fs::create_directories(ctx.out_dir / "checkpoints");
    fs::create_directories(ctx.out_dir / "confusion");
    if (cfg.write_diagnostics) fs::create_directories(ctx.out_dir / "diag");
  }

  RunRecord record;
  record.config_digest = ctx.digest_hex;
  record.tool_version = kToolVersion;

  std::vector<SplitResult> split_results(split_ids.size());
  if (cfg.parallel && split_ids.size() > 1) {
    std::vector<std::future<SplitResult>> futures;
    futures.reserve(split_ids.size());
    for (int split_id : split_ids) {
      futures.push_back(std::async(std::launch::async, [&ctx, split_id] {
        return SplitRunner(ctx, split_id).run();
      }));
    }
    for (std::size_t i = 0; i < futures.size(); ++i) {
      split_results[i] = futures[i].get();
    }
  } else {
    for (std::size_t i = 0; i < split_ids.size(); ++i) {
      split_results[i] = SplitRunner(ctx, split_ids[i]).run();
    }
  }

  for (SplitResult& sr : split_results) {
    record.self_checks += sr.self_checks;
    for (RunRow& row : sr.rows) record.rows.push_back(std::move(row));
    for (std::string& path : sr.checkpoints) {
      record.checkpoint_paths.push_back(std::move(path));
    }
  }

  const auto stop = std::chrono::steady_clock::now();
  record.duration_seconds =
      std::chrono::duration<double>(stop - start).count();

  if (!ctx.out_dir.empty()) {
    const RenderedReport rendered = render_run_record(record);
    write_text_file(ctx.out_dir / "report.csv", rendered.csv);
    write_text_file(ctx.out_dir / "report.txt", rendered.text);
    write_text_file(ctx.out_dir / "run.json", run_record_to_json(record));
  }
  return record;
}

std::string run_record_to_json(const RunRecord& record) {
  json j;
  j["config_digest"] = record.config_digest;
  j["tool_version"] = record.tool_version;
  j["duration_seconds"] = record.duration_seconds;
  j["self_checks"] = record.self_checks;
  j["checkpoints"] = record.checkpoint_paths;
  json rows = json::array();
  for (const RunRow& row : record.rows) {
    json r;
    r["paradigm"] = to_string(row.paradigm);
    r["language"] = row.language;
    r["split"] = row.split_id;
    r["checkpoint"] = row.checkpoint_path;
    r["metrics"] = metrics_to_json(row.metrics);
    rows.push_back(r);
  }
  j["rows"] = rows;
  return j.dump(2) + "\n";
}

RunRecord run_record_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError("run record: malformed JSON: " + std::string(e.what()));
  }
  RunRecord record;
  try {
    record.config_digest = j.at("config_digest").get<std::string>();
    record.tool_version = j.at("tool_version").get<std::string>();
    record.duration_seconds = j.at("duration_seconds").get<double>();
    record.self_checks = j.at("self_checks").get<std::int64_t>();
    record.checkpoint_paths = j.at("checkpoints").get<std::vector<std::string>>();
    for (const json& r : j.at("rows")) {
      RunRow row;
      const std::string paradigm = r.at("paradigm").get<std::string>();
      const auto parsed = parse_paradigm(paradigm);
      if (!parsed.has_value()) {
        throw DataError("run record: unknown paradigm '" + paradigm + "'");
      }
      row.paradigm = *parsed;
      row.language = r.at("language").get<std::string>();
      row.split_id = r.at("split").get<int>();
      row.checkpoint_path = r.at("checkpoint").get<std::string>();
      row.metrics = metrics_from_json(r.at("metrics"));
      record.rows.push_back(std::move(row));
    }
  } catch (const json::exception& e) {
    throw DataError("run record: field error: " + std::string(e.what()));
  }
  return record;
}

RenderedReport render_run_record(const RunRecord& record) {
  std::vector<MetricReport> reports;
  reports.reserve(record.rows.size());
  for (const RunRow& row : record.rows) {
    MetricReport m = row.metrics;
    m.paradigm = to_string(row.paradigm);
    m.language = row.language;
    m.split_label = std::to_string(row.split_id);
    reports.push_back(std::move(m));
  }
  return render_report(reports);
}

}  // namespace mtkd
