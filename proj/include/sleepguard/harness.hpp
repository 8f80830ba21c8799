#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "sleepguard/attacks.hpp"
#include "sleepguard/augment.hpp"
#include "sleepguard/dataset.hpp"
#include "sleepguard/nn.hpp"

namespace sleepguard {

/// Confusion counts with closed (label 1) as the positive class.
struct Metrics {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0, n = 0;
  double accuracy = 0.0;
  double precision = 0.0;  // 0 when nothing was predicted positive
  double recall = 0.0;     // 0 when there are no positives
  double f1 = 0.0;         // harmonic mean; 0 when precision + recall is 0

  static Metrics from_counts(std::size_t tp, std::size_t fp, std::size_t tn, std::size_t fn);
};

/// A prediction of exactly 0.5 counts as closed.
Metrics compute_metrics(std::span<const double> predictions, std::span<const int> labels);

std::vector<double> predictions(const Model& model, const Dataset& data, int threads = 1);
Metrics evaluate(const Model& model, const Dataset& data, int threads = 1);

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0.0;  // mean over the epoch, on the (augmented) batches
  double train_accuracy = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  AdamConfig adam;
  bool augment = false;
  AugmentConfig augment_config;
  std::uint64_t seed = 0;  // shuffling
  int threads = 1;
  std::function<void(const EpochStats&)> on_epoch;  // progress hook
};

/// Raised when training produces a non-finite loss or gradient.
class DivergenceError : public NonFiniteError {
 public:
  using NonFiniteError::NonFiniteError;
};

/// Mini-batch Adam on BCE. Batches are reshuffled each epoch; augmentation,
/// when enabled, draws fresh parameters per (epoch, sample).
std::vector<EpochStats> train(Model& model, const Dataset& train_data, const Dataset& val_data,
                              const TrainConfig& config);

void write_history_csv(const std::vector<EpochStats>& history, const std::filesystem::path& path);

enum class AdvTrainMode { kOff, kUnion, kReplace };

std::string adv_mode_name(AdvTrainMode mode);
AdvTrainMode parse_adv_mode(const std::string& name);

struct AdvTrainConfig {
  AttackConfig attack;
  AdvTrainMode mode = AdvTrainMode::kUnion;
  TrainConfig train;
  std::uint64_t attack_seed = 0;
  bool from_scratch = false;
  std::uint64_t init_seed = 0;  // used when from_scratch
  // Epochs between regenerations of the adversarial copies against the model
  // being trained. 0 generates them once, against the input model.
  std::size_t refresh = 1;
};

struct AdvTrainResult {
  Model defended;
  std::vector<EpochStats> history;
  std::size_t training_set_size = 0;
  double train_success_rate = 0.0;  // attack success on the training set
};

/// Attacks the whole training set against `model`, then retrains on the clean
/// set plus the adversarial copies (union) or on the copies alone (replace).
/// With refresh > 0 the copies are regenerated against the current weights
/// every `refresh` epochs.
AdvTrainResult adversarial_train(const Model& model, const Dataset& train_data, const Dataset& val_data,
                                 const AdvTrainConfig& config);

/// One row of the experiment grid. Every key is a flat JSON field; see
/// to_json for the full list.
struct ExperimentConfig {
  std::string name = "experiment";
  std::string model_tag;  // report label; defaults to the synthetic style or "custom"

  // Data: "synthetic" or a class-folder directory.
  std::string data = "synthetic";
  SyntheticStyle synthetic_style = SyntheticStyle::kEye;
  double synthetic_noise = 0.06;
  std::size_t train_size = 2000, val_size = 400, test_size = 500;  // synthetic only
  SplitFractions fractions;                                         // directories only

  // Seeds. Unset ones derive from `seed`.
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> data_seed, split_seed, model_seed, train_seed, augment_seed, attack_seed;

  Activation hidden = Activation::kRelu;
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  AdamConfig adam;
  bool augment = false;
  AugmentConfig augment_config;

  // Attack; family unset means a base row.
  std::optional<AttackFamily> attack;
  double epsilon = 0.1;
  std::optional<double> alpha;  // defaults to epsilon / 4
  std::optional<int> steps;     // defaults per family
  std::optional<Norm> norm;     // defaults per family
  bool random_start = true;
  double overshoot = 0.02;
  bool clip = true;
  bool targeted = false;
  int target = kClosed;

  AdvTrainMode adv_mode = AdvTrainMode::kUnion;
  std::size_t adv_epochs = 10;
  std::size_t adv_refresh = 1;
  bool adv_from_scratch = false;

  int threads = 1;  // not part of the hash; results do not depend on it

  std::uint64_t resolved_seed(const char* purpose) const;
  std::optional<AttackConfig> attack_config() const;
  TrainConfig train_config() const;
  std::string tag() const;

  /// Flat object with every key resolved (derived seeds filled in).
  nlohmann::json to_json() const;
  /// Applies the keys present in `j` on top of `base`. Unknown keys throw.
  static ExperimentConfig from_json(const nlohmann::json& j, ExperimentConfig base);
  static ExperimentConfig from_json(const nlohmann::json& j);
  /// Hash of the resolved config, excluding name and threads.
  std::string hash() const;
  /// Hash of only the keys that determine the trained base model.
  std::string base_hash() const;
  /// Hash of only the keys that determine the data splits.
  std::string data_hash() const;
  void validate() const;
};

/// Thrown for bad config documents (unknown keys, wrong types or values).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

DatasetSplits build_splits(const ExperimentConfig& config);

struct ReportRow {
  std::string config_hash;
  std::string name;
  std::string model_tag;
  bool augmented = false;
  std::string attack;  // "Base", "PGD", "FGSM", "DeepFool"
  std::string attack_detail;
  std::string status = "ok";
  std::string error;
  Metrics clean;                       // pre-defense model, clean test set
  std::optional<Metrics> before;       // pre-defense model on attacks against it
  std::optional<Metrics> after;        // defended model on attacks regenerated against it
  std::optional<Metrics> defended_clean;
  double success_before = 0.0;
  double success_after = 0.0;
  double loss_before = 0.0;  // mean post-attack BCE, pre-defense
};

struct ExperimentReport {
  std::vector<ReportRow> rows;
};

std::string report_csv(const ExperimentReport& report);
ExperimentReport parse_report_csv(const std::string& text);
std::string report_markdown(const ExperimentReport& report);

struct BaseModel {
  Model model;
  std::vector<EpochStats> history;
};

struct ExperimentOutcome {
  ReportRow row;
  std::shared_ptr<const BaseModel> base;
  std::optional<Model> defended;
  std::vector<EpochStats> adv_history;
};

/// Shared between grid rows: trained base models keyed by base_hash and
/// splits keyed by data_hash.
struct ExperimentCache {
  std::map<std::string, std::shared_ptr<const DatasetSplits>> splits;
  std::map<std::string, std::shared_ptr<const BaseModel>> bases;
  std::mutex mutex;
};

/// Runs one configuration end to end. Artifacts go under out_dir when it is
/// non-empty. Exceptions propagate.
ExperimentOutcome run_experiment(const ExperimentConfig& config, const std::filesystem::path& out_dir,
                                 ExperimentCache* cache = nullptr);

struct GridOptions {
  int row_threads = 1;  // rows run concurrently when > 1
  std::function<void(const std::string&)> log;
};

/// Runs every configuration. A failing row is recorded with status "error"
/// instead of aborting the grid. Writes report.csv and report.md to out_dir
/// when it is non-empty.
ExperimentReport run_grid(const std::vector<ExperimentConfig>& configs, const std::filesystem::path& out_dir,
                          const GridOptions& options = {});

/// Reads {"defaults": {...}, "configs": [{...}, ...]} or a bare list.
std::vector<ExperimentConfig> load_grid(const nlohmann::json& doc, const ExperimentConfig& base = {});

}  // namespace sleepguard
