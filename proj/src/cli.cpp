#include "sleepguard/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <iostream>
#include <sstream>

#include "sleepguard/hash.hpp"
#include "sleepguard/harness.hpp"
#include "sleepguard/model_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace sleepguard::cli {

namespace {

// Thrown for config files that cannot be read or parsed.
class ConfigFileError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

json read_config_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigFileError("cannot read config file " + path.string());
  try {
    return json::parse(in, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigFileError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
}

// Flags that map onto ExperimentConfig keys are collected here and applied
// on top of the config file.
struct Overrides {
  json values = json::object();
  std::string config_path;

  template <typename T>
  CLI::Option* add(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    return app->add_option_function<T>(flag, [this, key](const T& v) { values[key] = v; }, help);
  }

  CLI::Option* add_switch(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    return app
        ->add_option_function<std::string>(flag, [this, key](const std::string& v) { values[key] = v; }, help)
        ->check(CLI::IsMember({"on", "off"}));
  }

  ExperimentConfig resolve(ExperimentConfig base = {}) const {
    if (!config_path.empty()) base = ExperimentConfig::from_json(read_config_file(config_path), base);
    return ExperimentConfig::from_json(values, base);
  }
};

void add_common(CLI::App* app, Overrides& o, int& threads) {
  app->add_option("--config", o.config_path, "Flat JSON config file; flags take precedence over its values");
  o.add<std::uint64_t>(app, "--seed", "seed", "Master seed; data, split, model, training, augmentation and attack seeds derive from it");
  app->add_option("--threads", threads, "Worker threads (results do not depend on this)")->check(CLI::PositiveNumber);
}

void add_training(CLI::App* app, Overrides& o) {
  o.add<std::size_t>(app, "--epochs", "epochs", "Training epochs (default 30)");
  o.add<std::size_t>(app, "--batch-size", "batch_size", "Mini-batch size in samples (default 32)");
  o.add<double>(app, "--lr", "lr", "Adam learning rate (default 1e-3)");
  o.add<std::string>(app, "--hidden", "hidden_activation", "Hidden activation: relu or tanh (default relu)");
  o.add_switch(app, "--augment", "augment", "On-the-fly augmentation during training (default off)");
  o.add<double>(app, "--rotation", "rotation_range", "Augmentation rotation range in degrees (default 40)");
  o.add<double>(app, "--width-shift", "width_shift", "Horizontal shift range as a fraction of width (default 0.2)");
  o.add<double>(app, "--height-shift", "height_shift", "Vertical shift range as a fraction of height (default 0.2)");
  o.add<double>(app, "--shear", "shear_range", "Shear range as a shear factor (default 0.2)");
  o.add<double>(app, "--zoom", "zoom_range", "Zoom range as a fraction; scale drawn from [1-z, 1+z] (default 0.2)");
  o.add_switch(app, "--flip", "horizontal_flip", "Random horizontal flips during augmentation (default on)");
}

void add_attack(CLI::App* app, Overrides& o) {
  o.add<std::string>(app, "--attack", "attack", "Attack family: fgsm, pgd, deepfool or none");
  o.add<double>(app, "--epsilon", "epsilon",
                "Perturbation budget in normalized pixel units, images on [0,1] (default 0.1)");
  o.add<double>(app, "--alpha", "alpha", "PGD step size in normalized pixel units (default epsilon/4)");
  o.add<std::size_t>(app, "--steps", "steps", "PGD iterations / DeepFool iteration cap (default 10 / 50)");
  o.add<std::string>(app, "--norm", "norm", "Norm ball: linf or l2 (default linf for FGSM/PGD, l2 for DeepFool)");
  o.add_switch(app, "--random-start", "random_start", "PGD starts from a uniform point in the ball (default on)");
  o.add<double>(app, "--overshoot", "overshoot", "DeepFool overshoot, dimensionless (default 0.02)");
  o.add_switch(app, "--clip", "clip", "Clip adversarial pixels to [0,1] (default on)");
}

void add_adv(CLI::App* app, Overrides& o) {
  o.add<std::string>(app, "--mode", "adv_mode", "Adversarial training set: union (clean + adversarial) or replace");
  o.add<std::size_t>(app, "--adv-epochs", "adv_epochs", "Epochs of adversarial retraining (default 10)");
  o.add<std::size_t>(app, "--adv-refresh", "adv_refresh",
                     "Epochs between regenerating the adversarial copies against the current weights; 0 attacks once (default 1)");
  o.add_switch(app, "--from-scratch", "adv_from_scratch", "Retrain from a fresh initialization (default off)");
}

fs::path model_file(const fs::path& p) {
  const fs::path file = fs::is_directory(p) ? p / "model.rsnm" : p;
  if (!fs::is_regular_file(file)) throw DataError("model file " + file.string() + " does not exist");
  return file;
}

Model read_model(const fs::path& p) {
  const auto file = model_file(p);
  try {
    return load_model(file);
  } catch (const ModelFormatError&) {
    throw;
  } catch (const std::runtime_error& e) {
    throw DataError(e.what());
  }
}

LoadOptions load_options(int threads) {
  LoadOptions o;
  o.threads = threads;
  return o;
}

// Resolves --data for training-style commands: the synthetic generator, a
// directory with train/ and val/ (and optionally test/) subfolders, or a
// class-folder directory that is split here.
DatasetSplits resolve_splits(const ExperimentConfig& c, const fs::path& out, bool& wrote_split) {
  wrote_split = false;
  if (c.data == "synthetic") return build_splits(c);
  const fs::path root = c.data;
  if (!fs::is_directory(root)) throw DataError("dataset directory " + root.string() + " does not exist");
  if (fs::is_directory(root / "train") && fs::is_directory(root / "val")) {
    DatasetSplits s;
    s.train = load_directory(root / "train", load_options(c.threads));
    s.val = load_directory(root / "val", load_options(c.threads));
    if (fs::is_directory(root / "test")) s.test = load_directory(root / "test", load_options(c.threads));
    s.train.split = "train";
    s.val.split = "val";
    s.test.split = "test";
    return s;
  }
  auto s = build_splits(c);
  write_split_manifest(s, out / "splits.csv");
  wrote_split = true;
  return s;
}

json metrics_json(const Metrics& m) {
  return {{"accuracy", m.accuracy}, {"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1},
          {"tp", m.tp},             {"fp", m.fp},               {"tn", m.tn},         {"fn", m.fn}};
}

// manifest.json is written before any heavy work and rewritten with the
// artifact hashes at the end.
class Manifest {
 public:
  Manifest(fs::path out, std::string command, const std::vector<std::string>& args, json config)
      : out_(std::move(out)) {
    doc_["command"] = std::move(command);
    doc_["args"] = args;
    doc_["config"] = std::move(config);
    doc_["artifacts"] = json::object();
    doc_["status"] = "running";
    flush();
  }

  json& doc() { return doc_; }

  void finish() {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(out_)) {
      if (e.is_regular_file() && e.path().filename() != "manifest.json") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      doc_["artifacts"][fs::relative(f, out_).generic_string()] = hex64(fnv1a64(read_file(f)));
    }
    doc_["status"] = "complete";
    flush();
  }

 private:
  void flush() { write_file(out_ / "manifest.json", doc_.dump(2) + "\n"); }

  fs::path out_;
  json doc_;
};

TrainConfig with_progress(TrainConfig t, std::ostream& err, const std::string& label) {
  t.on_epoch = [&err, label, total = t.epochs](const EpochStats& s) {
    char buf[200];
    std::snprintf(buf, sizeof buf, "[%s] epoch %zu/%zu loss=%.4f acc=%.4f val_loss=%.4f val_acc=%.4f\n",
                  label.c_str(), s.epoch, total, s.train_loss, s.train_accuracy, s.val_loss, s.val_accuracy);
    err << buf << std::flush;
  };
  return t;
}

struct Context {
  std::vector<std::string> args;
  std::ostream& out;
  std::ostream& err;
};

int cmd_synth(Context& ctx, std::size_t n, const std::string& style, double noise, std::optional<std::uint64_t> seed,
              const fs::path& out) {
  ExperimentConfig c;
  c.synthetic_style = parse_synthetic_style(style);
  c.synthetic_noise = noise;
  if (seed) c.seed = *seed;
  if (n < 2) throw UsageError("--n must be at least 2");
  Manifest manifest(out, "synth", ctx.args, c.to_json());
  SyntheticConfig sc;
  sc.style = c.synthetic_style;
  sc.noise = c.synthetic_noise;
  sc.seed = c.resolved_seed("data");
  const Dataset all = generate_synthetic(sc, (n + 1) / 2);
  const auto splits = split_dataset(all, c.fractions, c.resolved_seed("split"));
  write_directory(splits.train, out / "train");
  write_directory(splits.val, out / "val");
  write_directory(splits.test, out / "test");
  write_split_manifest(splits, out / "splits.csv");
  manifest.doc()["counts"] = {{"train", splits.train.size()}, {"val", splits.val.size()}, {"test", splits.test.size()}};
  manifest.finish();
  ctx.out << "wrote " << all.size() << " images (" << splits.train.size() << " train, " << splits.val.size()
          << " val, " << splits.test.size() << " test) to " << out.string() << "\n";
  return kOk;
}

int cmd_train(Context& ctx, const ExperimentConfig& c, const fs::path& out) {
  c.validate();
  Manifest manifest(out, "train", ctx.args, c.to_json());
  bool wrote_split = false;
  const auto splits = resolve_splits(c, out, wrote_split);
  Model model = build_paper_model(100, 100, c.resolved_seed("model"), c.hidden);
  const auto history = train(model, splits.train, splits.val, with_progress(c.train_config(), ctx.err, "train"));
  save_model(model, out / "model.rsnm");
  write_history_csv(history, out / "history.csv");
  json metrics;
  metrics["val"] = metrics_json(evaluate(model, splits.val, c.threads));
  if (!splits.test.empty()) metrics["test"] = metrics_json(evaluate(model, splits.test, c.threads));
  write_file(out / "metrics.json", metrics.dump(2) + "\n");
  manifest.finish();
  ctx.out << "val_accuracy=" << metrics["val"]["accuracy"].get<double>();
  if (metrics.contains("test")) ctx.out << " test_accuracy=" << metrics["test"]["accuracy"].get<double>();
  ctx.out << "\n";
  return kOk;
}

int cmd_evaluate(Context& ctx, const fs::path& model_path, const fs::path& data, const fs::path& out, int threads) {
  const Model model = read_model(model_path);
  const Dataset d = load_directory(data, load_options(threads));
  const auto m = evaluate(model, d, threads);
  const json j = metrics_json(m);
  if (!out.empty()) write_file(out / "metrics.json", j.dump(2) + "\n");
  ctx.out << j.dump() << "\n";
  return kOk;
}

int cmd_attack(Context& ctx, const ExperimentConfig& c, const fs::path& model_path, const fs::path& data,
               const fs::path& out) {
  c.validate();
  const auto ac = c.attack_config();
  if (!ac) throw UsageError("attack needs --attack fgsm|pgd|deepfool");
  Manifest manifest(out, "attack", ctx.args, c.to_json());
  const Model model = read_model(model_path);
  const Dataset d = load_directory(data, load_options(c.threads));
  const std::uint64_t seed = c.resolved_seed("attack");
  const auto attacked = attack_dataset(model, d, *ac, seed, c.threads);
  write_directory(attacked.adversarial, out / "adversarial");
  write_attack_manifest(out / "attack_manifest.csv", attacked, *ac, seed);
  json metrics;
  metrics["attack"] = ac->tag();
  metrics["success_rate"] = attacked.success_rate;
  metrics["correct_before"] = attacked.correct_before;
  metrics["flipped"] = attacked.flipped;
  metrics["mean_adversarial_loss"] = attacked.mean_adversarial_loss;
  metrics["clean"] = metrics_json(evaluate(model, d, c.threads));
  metrics["adversarial"] = metrics_json(evaluate(model, attacked.adversarial, c.threads));
  write_file(out / "metrics.json", metrics.dump(2) + "\n");
  manifest.finish();
  ctx.out << "success_rate=" << attacked.success_rate
          << " clean_accuracy=" << metrics["clean"]["accuracy"].get<double>()
          << " adversarial_accuracy=" << metrics["adversarial"]["accuracy"].get<double>() << "\n";
  return kOk;
}

int cmd_adv_train(Context& ctx, const ExperimentConfig& c, const fs::path& model_path, const fs::path& out) {
  c.validate();
  const auto ac = c.attack_config();
  if (!ac) throw UsageError("adv-train needs --attack fgsm|pgd|deepfool");
  if (c.adv_mode == AdvTrainMode::kOff) throw UsageError("adv-train needs --mode union or replace");
  Manifest manifest(out, "adv-train", ctx.args, c.to_json());
  const Model base = read_model(model_path);
  bool wrote_split = false;
  const auto splits = resolve_splits(c, out, wrote_split);
  const std::uint64_t attack_seed = c.resolved_seed("attack");
  AdvTrainConfig adv;
  adv.attack = *ac;
  adv.mode = c.adv_mode;
  TrainConfig tc = c.train_config();
  tc.epochs = c.adv_epochs;
  adv.train = with_progress(tc, ctx.err, "adv-train");
  adv.train.seed = derive_seed(adv.train.seed, 0xad7);
  adv.attack_seed = derive_seed(attack_seed, 0);
  adv.from_scratch = c.adv_from_scratch;
  adv.init_seed = c.resolved_seed("model");
  adv.refresh = c.adv_refresh;
  const auto result = adversarial_train(base, splits.train, splits.val, adv);
  save_model(result.defended, out / "model.rsnm");
  write_history_csv(result.history, out / "history.csv");
  json metrics;
  metrics["training_set_size"] = result.training_set_size;
  metrics["train_success_rate"] = result.train_success_rate;
  if (!splits.test.empty()) {
    const std::uint64_t test_seed = derive_seed(attack_seed, 1);
    const auto before = attack_dataset(base, splits.test, *ac, test_seed, c.threads);
    const auto after = attack_dataset(result.defended, splits.test, *ac, test_seed, c.threads);
    metrics["before"] = metrics_json(evaluate(base, before.adversarial, c.threads));
    metrics["after"] = metrics_json(evaluate(result.defended, after.adversarial, c.threads));
    metrics["defended_clean"] = metrics_json(evaluate(result.defended, splits.test, c.threads));
    metrics["success_rate_before"] = before.success_rate;
    metrics["success_rate_after"] = after.success_rate;
  }
  write_file(out / "metrics.json", metrics.dump(2) + "\n");
  manifest.finish();
  ctx.out << "training_set_size=" << result.training_set_size;
  if (metrics.contains("after")) {
    ctx.out << " adversarial_accuracy=" << metrics["after"]["accuracy"].get<double>() << " ("
            << metrics["before"]["accuracy"].get<double>() << ")";
  }
  ctx.out << "\n";
  return kOk;
}

int cmd_augment(Context& ctx, const ExperimentConfig& c, const fs::path& data, std::size_t copies,
                const fs::path& out) {
  c.validate();
  Manifest manifest(out, "augment", ctx.args, c.to_json());
  const Dataset d = load_directory(data, load_options(c.threads));
  AugmentConfig ac = c.augment_config;
  ac.seed = c.resolved_seed("augment");
  const Dataset written = materialize_augmented(d, ac, copies, out);
  manifest.finish();
  ctx.out << "wrote " << written.size() << " augmented images to " << out.string() << "\n";
  return kOk;
}

int cmd_grid(Context& ctx, const Overrides& o, bool synthetic, int row_threads, int threads, const fs::path& out) {
  if (o.config_path.empty()) throw UsageError("grid needs --config");
  auto configs = load_grid(read_config_file(o.config_path));
  for (auto& c : configs) {
    c = ExperimentConfig::from_json(o.values, c);
    if (synthetic) c.data = "synthetic";
    c.threads = threads;
    c.validate();
  }
  json resolved = json::array();
  for (const auto& c : configs) resolved.push_back(c.to_json());
  Manifest manifest(out, "grid", ctx.args, resolved);
  GridOptions opt;
  opt.row_threads = row_threads;
  opt.log = [&ctx](const std::string& msg) { ctx.err << "[grid] " << msg << "\n" << std::flush; };
  const auto report = run_grid(configs, out, opt);
  manifest.finish();
  ctx.out << report_markdown(report);
  const auto failed = std::count_if(report.rows.begin(), report.rows.end(),
                                    [](const ReportRow& r) { return r.status != "ok"; });
  if (failed > 0) ctx.err << "warning: " << failed << " of " << report.rows.size() << " rows failed\n";
  return kOk;
}

int cmd_report(Context& ctx, const fs::path& input, const fs::path& out) {
  const auto report = parse_report_csv(read_file(input));
  const auto md = report_markdown(report);
  if (!out.empty()) write_file(out / "report.md", md);
  ctx.out << md;
  return kOk;
}

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  std::replace(s.begin(), s.end(), '\r', ' ');
  return s;
}

}  // namespace

int parse_and_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Eye-closedness CNN robustness toolkit: training, attacks, augmentation and adversarial training",
               "sleepguard"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");

  Overrides o;
  int threads = 1;
  fs::path out_dir, model_path, data_path, input_path;
  std::size_t n = 2900, copies = 1;
  std::string style = "eye";
  double noise = 0.06;
  std::optional<std::uint64_t> synth_seed;
  bool synthetic = false;
  int row_threads = 1;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic open/closed dataset split into train/val/test");
  synth->add_option("--n", n, "Total number of images, half per class")->capture_default_str();
  synth->add_option("--style", style, "eye (24x24 patches upscaled to 100x100) or face (100x100 faces)")
      ->check(CLI::IsMember({"eye", "face"}))
      ->capture_default_str();
  synth->add_option("--noise", noise, "Std of additive pixel noise on the [0,1] scale")->capture_default_str();
  synth->add_option("--seed", synth_seed, "Master seed");
  synth->add_option("--out", out_dir, "Output directory")->required();

  auto* train_cmd = app.add_subcommand("train", "Train the classifier; writes model.rsnm, history.csv, metrics.json");
  train_cmd->add_option_function<std::string>(
      "--data", [&o](const std::string& v) { o.values["data"] = v; },
      "Dataset: a directory with train/ and val/ (and optional test/) class folders, a class-folder directory "
      "to split, or 'synthetic'");
  add_common(train_cmd, o, threads);
  add_training(train_cmd, o);
  train_cmd->add_option("--out", out_dir, "Output directory")->required();

  auto* eval_cmd = app.add_subcommand("evaluate", "Accuracy, precision, recall and F1 (closed is positive)");
  eval_cmd->add_option("--model", model_path, "Model file or a directory containing model.rsnm")->required();
  eval_cmd->add_option("--data", data_path, "Class-folder directory (open/, closed/)")->required();
  eval_cmd->add_option("--out", out_dir, "Optional output directory for metrics.json");
  eval_cmd->add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);

  auto* attack_cmd = app.add_subcommand("attack", "Attack every image of a dataset against a trained model");
  attack_cmd->add_option("--model", model_path, "Model file or a directory containing model.rsnm")->required();
  attack_cmd->add_option("--data", data_path, "Class-folder directory (open/, closed/)")->required();
  add_common(attack_cmd, o, threads);
  add_attack(attack_cmd, o);
  attack_cmd->add_option("--out", out_dir, "Output directory")->required();

  auto* adv_cmd = app.add_subcommand("adv-train", "Adversarially retrain a model on attacks against it");
  adv_cmd->add_option("--model", model_path, "Model file or a directory containing model.rsnm")->required();
  adv_cmd->add_option_function<std::string>(
      "--data", [&o](const std::string& v) { o.values["data"] = v; },
      "Dataset: a directory with train/ and val/ (and optional test/) class folders, a class-folder directory "
      "to split, or 'synthetic'");
  add_common(adv_cmd, o, threads);
  add_training(adv_cmd, o);
  add_attack(adv_cmd, o);
  add_adv(adv_cmd, o);
  adv_cmd->add_option("--out", out_dir, "Output directory")->required();

  auto* aug_cmd = app.add_subcommand("augment", "Write augmented copies of a dataset with a parameter manifest");
  aug_cmd->add_option("--data", data_path, "Class-folder directory (open/, closed/)")->required();
  aug_cmd->add_option("--copies", copies, "Augmented copies per image")->capture_default_str();
  add_common(aug_cmd, o, threads);
  add_training(aug_cmd, o);
  aug_cmd->add_option("--out", out_dir, "Output directory")->required();

  auto* grid_cmd = app.add_subcommand("grid", "Run a grid of experiments; writes report.csv and report.md");
  add_common(grid_cmd, o, threads);
  add_training(grid_cmd, o);
  add_attack(grid_cmd, o);
  add_adv(grid_cmd, o);
  grid_cmd->add_flag("--synthetic", synthetic, "Substitute the synthetic generator for every row's dataset");
  grid_cmd->add_option("--row-threads", row_threads, "Grid rows run concurrently")->check(CLI::PositiveNumber);
  grid_cmd->add_option("--out", out_dir, "Output directory")->required();

  auto* report_cmd = app.add_subcommand("report", "Render a report CSV as the aligned markdown table");
  report_cmd->add_option("input", input_path, "report.csv written by grid")->required();
  report_cmd->add_option("--out", out_dir, "Optional output directory for report.md");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error[usage]: " << one_line(e.what()) << "\n";
    return kUsage;
  }

  Context ctx{args, out, err};
  try {
    const auto resolved = [&] {
      ExperimentConfig c = o.resolve();
      c.threads = threads;
      return c;
    };
    if (*synth) return cmd_synth(ctx, n, style, noise, synth_seed, out_dir);
    if (*train_cmd) return cmd_train(ctx, resolved(), out_dir);
    if (*eval_cmd) return cmd_evaluate(ctx, model_path, data_path, out_dir, threads);
    if (*attack_cmd) {
      auto c = resolved();
      if (!c.attack) throw UsageError("attack needs --attack fgsm|pgd|deepfool");
      return cmd_attack(ctx, c, model_path, data_path, out_dir);
    }
    if (*adv_cmd) return cmd_adv_train(ctx, resolved(), model_path, out_dir);
    if (*aug_cmd) return cmd_augment(ctx, resolved(), data_path, copies, out_dir);
    if (*grid_cmd) return cmd_grid(ctx, o, synthetic, row_threads, threads, out_dir);
    if (*report_cmd) return cmd_report(ctx, input_path, out_dir);
  } catch (const ConfigFileError& e) {
    err << "error[config]: " << one_line(e.what()) << "\n";
    return kConfig;
  } catch (const NonFiniteError& e) {
    err << "error[numeric]: " << one_line(e.what()) << "\n";
    return kNumeric;
  } catch (const DataError& e) {
    err << "error[data]: " << one_line(e.what()) << "\n";
    return kData;
  } catch (const ModelFormatError& e) {
    err << "error[data]: " << one_line(e.what()) << "\n";
    return kData;
  } catch (const ShapeError& e) {
    err << "error[data]: " << one_line(e.what()) << "\n";
    return kData;
  } catch (const std::invalid_argument& e) {
    err << "error[usage]: " << one_line(e.what()) << "\n";
    return kUsage;
  } catch (const fs::filesystem_error& e) {
    err << "error[data]: " << one_line(e.what()) << "\n";
    return kData;
  } catch (const std::exception& e) {
    err << "error[internal]: " << one_line(e.what()) << "\n";
    return kInternal;
  }
  return kUsage;
}

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return parse_and_dispatch(args, std::cout, std::cerr);
}

}  // namespace sleepguard::cli
