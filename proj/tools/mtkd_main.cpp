// mtkd: deterministic teacher training, distillation, and paradigm
// comparison for the synthetic multilingual classification benchmark.
//
// Commands: gen-data, train-teacher, distill, compare, report.
// Every flag can also be set from a config file (--config, INI-style
// "key = value" with [training] / [distill] / [generator] sections).
// Exit codes: 0 success, 2 configuration error, 3 data/file error,
// 4 training failure or broken internal invariant.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "mtkd/data.hpp"
#include "mtkd/experiment.hpp"
#include "mtkd/rng.hpp"
#include "mtkd/version.hpp"

namespace fs = std::filesystem;
using namespace mtkd;

namespace {

// Everything the subcommands share. Raw option storage; assembled into an
// ExperimentConfig after parsing so preset/override precedence is explicit.
struct CliState {
  std::string config_path;
  std::string preset = "desk";
  double scale = 1.0;
  std::uint64_t seed = 1;
  std::string out_dir;
  std::string data_path;
  std::string teacher_dir;
  std::vector<std::string> languages;
  int split_id = -1;  // -1 = all splits
  std::vector<int> hidden_dims = {64, 64};
  std::vector<std::string> paradigms;

  int epochs = -1;             // -1 = preset default
  double learning_rate = -1.0;
  std::string optimizer;       // "" = preset default
  int batch_size = -1;

  double lambda = 0.25;
  double smooth_temperature = 5.0;
  double sharpen_tau = 0.1;
  std::string kl_direction = "student-to-teacher";
  bool t_squared_rescale = false;

  int bootstrap_resamples = 1000;
  double confidence = 0.95;
  bool no_self_check = false;
  bool parallel = false;
  bool no_diagnostics = false;

  double sigma = -1.0;           // -1 = preset default
  double shift_norm = -1.0;
  double spacing = -1.0;
  int rotation_dims = -2;        // -2 = preset default, -1 = rotate everything
};

GeneratorSpec generator_for_preset(const CliState& st) {
  const std::uint64_t data_seed = derive_seed(st.seed, "data");
  GeneratorSpec spec;
  if (st.preset == "desk" || st.preset == "paper-hparams") {
    spec = GeneratorSpec::desk(data_seed);
  } else if (st.preset == "table1-scaled") {
    spec = GeneratorSpec::table1_scaled(data_seed, st.scale);
  } else {
    throw ConfigError("unknown preset '" + st.preset +
                      "' (expected desk, table1-scaled, or paper-hparams)");
  }
  if (st.sigma >= 0.0) spec.sigma = st.sigma;
  if (st.shift_norm >= 0.0) spec.language_shift_norm = st.shift_norm;
  if (st.spacing >= 0.0) spec.class_mean_spacing = st.spacing;
  if (st.rotation_dims >= -1) spec.language_rotation_dims = st.rotation_dims;
  return spec;
}

TrainingPreset training_for_preset(const CliState& st) {
  TrainingPreset t = st.preset == "paper-hparams" ? TrainingPreset::paper()
                                                  : TrainingPreset::desk();
  if (st.epochs >= 0) t.epochs = st.epochs;
  if (st.learning_rate >= 0.0) t.learning_rate = st.learning_rate;
  if (st.batch_size >= 0) t.batch_size = st.batch_size;
  if (!st.optimizer.empty()) {
    if (st.optimizer == "sgd") {
      t.optimizer = OptimizerKind::kSgd;
    } else if (st.optimizer == "adam") {
      t.optimizer = OptimizerKind::kAdam;
    } else {
      throw ConfigError("unknown optimizer '" + st.optimizer + "'");
    }
  }
  return t;
}

DistillConfig distill_for(const CliState& st) {
  DistillConfig d;
  d.lambda = st.lambda;
  d.smooth_temperature = st.smooth_temperature;
  d.sharpen_tau = st.sharpen_tau;
  d.t_squared_rescale = st.t_squared_rescale;
  if (st.kl_direction == "student-to-teacher") {
    d.kl_direction = KlDirection::kStudentToTeacher;
  } else if (st.kl_direction == "teacher-to-student") {
    d.kl_direction = KlDirection::kTeacherToStudent;
  } else {
    throw ConfigError("unknown kl direction '" + st.kl_direction + "'");
  }
  d.validate();
  return d;
}

ExperimentConfig experiment_for(const CliState& st) {
  ExperimentConfig cfg;
  if (!st.data_path.empty()) {
    cfg.dataset_path = st.data_path;
  } else {
    cfg.generator = generator_for_preset(st);
  }
  cfg.hidden_dims = st.hidden_dims;
  cfg.training = training_for_preset(st);
  cfg.distill = distill_for(st);
  cfg.languages = st.languages;
  if (st.split_id >= 0) cfg.split_id = st.split_id;
  cfg.master_seed = st.seed;
  cfg.out_dir = st.out_dir;
  cfg.teacher_dir = st.teacher_dir;
  cfg.bootstrap_resamples = st.bootstrap_resamples;
  cfg.confidence = st.confidence;
  cfg.self_check = !st.no_self_check;
  cfg.parallel = st.parallel;
  cfg.write_diagnostics = !st.no_diagnostics;
  for (const std::string& name : st.paradigms) {
    const auto p = parse_paradigm(name);
    if (!p.has_value()) {
      throw ConfigError("unknown paradigm '" + name + "'");
    }
    cfg.paradigms.push_back(*p);
  }
  return cfg;
}

void add_generator_options(CLI::App* cmd, CliState& st) {
  cmd->add_option("--generator.sigma,--sigma", st.sigma,
                  "Within-class standard deviation");
  cmd->add_option("--generator.shift-norm,--shift-norm", st.shift_norm,
                  "Norm of the per-language shift vector");
  cmd->add_option("--generator.spacing,--spacing", st.spacing,
                  "Class mean spacing");
  cmd->add_option("--generator.rotation-dims,--rotation-dims", st.rotation_dims,
                  "Directions rotated per language (-1 = all)");
}

// Adds the options shared by train-teacher / distill / compare. Dotted
// names put the option into the matching config-file section; the undotted
// alias keeps the command line terse.
void add_experiment_options(CLI::App* cmd, CliState& st) {
  cmd->add_option("--data", st.data_path,
                  "Dataset JSONL path (overrides preset generation)");
  cmd->add_option("--teacher-dir", st.teacher_dir,
                  "Directory of teacher checkpoints to load instead of training");
  cmd->add_option("--language", st.languages,
                  "Language(s) in scope (default: all dataset languages)");
  cmd->add_option("--split", st.split_id,
                  "Single split id (default: rotate over all valid splits)")
      ->check(CLI::NonNegativeNumber);
  cmd->add_option("--hidden", st.hidden_dims,
                  "Hidden layer widths (default 64 64)");

  cmd->add_option("--training.epochs,--epochs", st.epochs, "Training epochs");
  cmd->add_option("--training.learning-rate,--lr", st.learning_rate,
                  "Learning rate");
  cmd->add_option("--training.optimizer,--optimizer", st.optimizer,
                  "Optimizer: sgd or adam");
  cmd->add_option("--training.batch-size,--batch-size", st.batch_size,
                  "Batch size");

  cmd->add_option("--distill.lambda,--lambda", st.lambda,
                  "Distillation mixing weight in [0,1]");
  cmd->add_option("--distill.smooth-temperature,--smooth-temperature",
                  st.smooth_temperature, "Softmax smoothing temperature T");
  cmd->add_option("--distill.sharpen-tau,--sharpen-tau", st.sharpen_tau,
                  "Teacher-weight sharpening temperature tau");
  cmd->add_option("--distill.kl-direction,--kl-direction", st.kl_direction,
                  "KL direction: student-to-teacher or teacher-to-student");
  cmd->add_flag("--distill.t-squared-rescale,--t-squared-rescale",
                st.t_squared_rescale,
                "Multiply the distillation term by T^2");

  cmd->add_option("--bootstrap-resamples", st.bootstrap_resamples,
                  "Bootstrap resamples per confidence interval (0 disables)");
  cmd->add_option("--confidence", st.confidence,
                  "Confidence level for bootstrap intervals");
  cmd->add_flag("--no-self-check", st.no_self_check,
                "Skip the in-run loss reduction identities");
  cmd->add_flag("--parallel", st.parallel,
                "Run independent splits concurrently (same results)");
  cmd->add_flag("--no-diagnostics", st.no_diagnostics,
                "Skip the per-sample diagnostics streams");
  add_generator_options(cmd, st);
}

void dump_generated_dataset(const ExperimentConfig& cfg) {
  if (!cfg.generator.has_value() || cfg.out_dir.empty()) return;
  fs::create_directories(cfg.out_dir);
  write_jsonl(generate_dataset(*cfg.generator),
              fs::path(cfg.out_dir) / "dataset.jsonl");
}

void print_rows(const RunRecord& record) {
  const RenderedReport rendered = render_run_record(record);
  std::cout << rendered.text;
}

int cmd_gen_data(const CliState& st) {
  GeneratorSpec spec = generator_for_preset(st);
  const Dataset dataset = generate_dataset(spec);
  const fs::path out = st.out_dir.empty() ? fs::path("out") : fs::path(st.out_dir);
  fs::create_directories(out);
  write_jsonl(dataset, out / "dataset.jsonl");

  std::cout << "wrote " << (out / "dataset.jsonl").string() << " ("
            << dataset.samples.size() << " samples)\n";
  for (const std::string& lang : dataset.manifest.languages) {
    const auto& rows = dataset.manifest.counts.at(lang);
    std::cout << lang << ": " << dataset.manifest.splits_per_language.at(lang)
              << " split(s)\n";
    for (std::size_t s = 0; s < rows.size(); ++s) {
      std::int64_t total = 0;
      for (std::int64_t c : rows[s]) total += c;
      std::cout << "  file split " << s << ": " << total << " samples (";
      for (std::size_t c = 0; c < rows[s].size(); ++c) {
        std::cout << (c ? ", " : "") << dataset.manifest.class_names[c] << " "
                  << rows[s][c];
      }
      std::cout << ")\n";
    }
  }
  return 0;
}

int cmd_train_teacher(CliState& st) {
  st.paradigms = {"ft-mono"};
  ExperimentConfig cfg = experiment_for(st);
  dump_generated_dataset(cfg);
  const RunRecord record = run_experiment(cfg);

  // The teacher's own train-split fit, alongside the held-out numbers.
  Dataset dataset = cfg.dataset_path.empty()
                        ? generate_dataset(*cfg.generator)
                        : load_jsonl(cfg.dataset_path);
  for (const RunRow& row : record.rows) {
    double train_ur = -1.0;
    if (!row.checkpoint_path.empty()) {
      const Checkpoint ckpt = load_checkpoint(row.checkpoint_path);
      const auto train = select_split(dataset, row.language, row.split_id,
                                      SplitRole::kTrain);
      train_ur = evaluate_model(ckpt.model, train,
                                dataset.manifest.class_count, 0, cfg.confidence,
                                0)
                     .ur;
    }
    std::printf("teacher %s split %d: train UR %.2f, test UR %.2f\n",
                row.language.c_str(), row.split_id, train_ur, row.metrics.ur);
  }
  print_rows(record);
  return 0;
}

int cmd_distill(CliState& st) {
  if (st.paradigms.size() != 1) {
    throw ConfigError("distill: exactly one --paradigm is required");
  }
  ExperimentConfig cfg = experiment_for(st);
  dump_generated_dataset(cfg);
  const RunRecord record = run_experiment(cfg);
  print_rows(record);
  return 0;
}

int cmd_compare(CliState& st) {
  if (st.paradigms.empty()) {
    for (Paradigm p : all_paradigms()) st.paradigms.push_back(to_string(p));
  }
  if (st.paradigms.size() < 2) {
    throw ConfigError("compare: at least two paradigms are required");
  }
  ExperimentConfig cfg = experiment_for(st);
  dump_generated_dataset(cfg);
  const RunRecord record = run_experiment(cfg);
  print_rows(record);
  return 0;
}

int cmd_report(const std::string& run_path, const std::string& out_dir) {
  std::ifstream f(run_path, std::ios::binary);
  if (!f) {
    throw DataError("cannot open run record " + run_path);
  }
  std::ostringstream buf;
  buf << f.rdbuf();
  const RunRecord record = run_record_from_json(buf.str());
  const RenderedReport rendered = render_run_record(record);
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    std::ofstream csv(fs::path(out_dir) / "report.csv",
                      std::ios::binary | std::ios::trunc);
    csv << rendered.csv;
    std::ofstream txt(fs::path(out_dir) / "report.txt",
                      std::ios::binary | std::ios::trunc);
    txt << rendered.text;
  }
  std::cout << rendered.text;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CliState st;
  std::string run_path;

  CLI::App app{"Language-aware multi-teacher distillation benchmark"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.set_config("--config", "", "Config file (INI: key = value, [sections])");
  app.require_subcommand(1);
  app.fallthrough();

  app.add_option("--seed", st.seed, "Master seed; all other seeds derive from it");
  app.add_option("--out", st.out_dir, "Output directory");
  app.add_option("--preset", st.preset,
                 "desk, table1-scaled, or paper-hparams (default desk)");
  app.add_option("--scale", st.scale,
                 "Sample-count scale for the table1-scaled preset");

  CLI::App* gen = app.add_subcommand(
      "gen-data", "Generate a synthetic dataset (JSONL + manifest)");
  add_generator_options(gen, st);

  CLI::App* teach = app.add_subcommand(
      "train-teacher", "Train per-language cross-entropy teachers");
  add_experiment_options(teach, st);

  CLI::App* dist = app.add_subcommand(
      "distill", "Train one paradigm's student and evaluate it");
  add_experiment_options(dist, st);
  dist->add_option("--paradigm", st.paradigms,
                   "Paradigm to train (exactly one)");

  CLI::App* comp = app.add_subcommand(
      "compare", "Run several paradigms with shared data and seeds");
  add_experiment_options(comp, st);
  comp->add_option("--paradigm", st.paradigms,
                   "Paradigms to compare (default: all five)");

  CLI::App* rep = app.add_subcommand(
      "report", "Re-render report.csv / report.txt from a run.json");
  rep->add_option("run", run_path, "Path to run.json")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(st);
    if (teach->parsed()) return cmd_train_teacher(st);
    if (dist->parsed()) return cmd_distill(st);
    if (comp->parsed()) return cmd_compare(st);
    if (rep->parsed()) return cmd_report(run_path, st.out_dir);
    throw ConfigError("no command given");
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const UpdateRejectedError& e) {
    std::cerr << "training failure: " << e.what() << "\n";
    return 4;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::logic_error& e) {
    std::cerr << "internal invariant violated: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
}
