#include "sleepguard/harness.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "sleepguard/hash.hpp"
#include "sleepguard/model_io.hpp"
#include "sleepguard/parallel.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace sleepguard {

// ---------------------------------------------------------------------------
// Metrics

Metrics Metrics::from_counts(std::size_t tp, std::size_t fp, std::size_t tn, std::size_t fn) {
  Metrics m;
  m.tp = tp;
  m.fp = fp;
  m.tn = tn;
  m.fn = fn;
  m.n = tp + fp + tn + fn;
  if (m.n == 0) throw DataError("metrics need at least one sample");
  m.accuracy = static_cast<double>(tp + tn) / static_cast<double>(m.n);
  m.precision = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  m.recall = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  m.f1 = m.precision + m.recall > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  return m;
}

Metrics compute_metrics(std::span<const double> preds, std::span<const int> labels) {
  if (preds.size() != labels.size()) throw std::invalid_argument("predictions/labels size mismatch");
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const bool positive = preds[i] >= 0.5;
    if (labels[i] == kClosed) {
      positive ? ++tp : ++fn;
    } else {
      positive ? ++fp : ++tn;
    }
  }
  return Metrics::from_counts(tp, fp, tn, fn);
}

std::vector<double> predictions(const Model& model, const Dataset& data, int threads) {
  const auto inputs = data.inputs();
  constexpr std::size_t kBlock = 8;
  const std::size_t blocks = (inputs.size() + kBlock - 1) / kBlock;
  std::vector<double> out(inputs.size());
  parallel_for(blocks, threads, [&](std::size_t b) {
    const std::size_t start = b * kBlock;
    const std::size_t count = std::min(kBlock, inputs.size() - start);
    const auto p = predict_batch(model, std::span(inputs).subspan(start, count));
    std::copy(p.begin(), p.end(), out.begin() + static_cast<std::ptrdiff_t>(start));
  });
  return out;
}

Metrics evaluate(const Model& model, const Dataset& data, int threads) {
  if (data.empty()) throw DataError("cannot evaluate on an empty dataset");
  const auto p = predictions(model, data, threads);
  const auto labels = data.labels();
  return compute_metrics(p, labels);
}

// ---------------------------------------------------------------------------
// Training

namespace {

void check_training_inputs(const Dataset& train_data, const Dataset& val_data, const TrainConfig& config) {
  if (train_data.empty()) throw DataError("training set is empty");
  if (val_data.empty()) throw DataError("validation set is empty");
  if (config.batch_size == 0) throw std::invalid_argument("batch size must be >= 1");
  if (config.augment) config.augment_config.validate();
}

// One pass over train_data. `epoch` seeds the shuffle and the augmentation
// draws, so resuming at epoch k reproduces an uninterrupted run.
EpochStats run_epoch(Model& model, const Dataset& train_data, const Dataset& val_data, const TrainConfig& config,
                     AdamState& adam, std::size_t epoch) {
  const std::size_t n = train_data.size();
  const auto inputs = train_data.inputs();
  const auto labels = train_data.labels();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle = Rng::stream(config.seed, epoch);
  shuffle.shuffle(order.begin(), order.end());
  double loss_sum = 0.0;
  std::size_t correct = 0;
  std::vector<Tensor> augmented;
  std::vector<const Tensor*> xs;
  std::vector<int> ys;
  for (std::size_t start = 0; start < n; start += config.batch_size) {
    const std::size_t count = std::min(config.batch_size, n - start);
    xs.assign(count, nullptr);
    ys.resize(count);
    if (config.augment) {
      augmented.resize(count);
      parallel_for(count, config.threads, [&](std::size_t k) {
        const std::size_t idx = order[start + k];
        Rng rng = augment_stream(config.augment_config, epoch, idx);
        augmented[k] = random_augment(*inputs[idx], config.augment_config, rng);
      });
    }
    for (std::size_t k = 0; k < count; ++k) {
      const std::size_t idx = order[start + k];
      xs[k] = config.augment ? &augmented[k] : inputs[idx];
      ys[k] = labels[idx];
    }
    BatchGradient g;
    try {
      g = batch_gradient(model, xs, ys, config.threads);
    } catch (const NonFiniteError& e) {
      throw DivergenceError("training diverged in epoch " + std::to_string(epoch + 1) + ": " + e.what());
    }
    if (!std::isfinite(g.mean_loss)) {
      throw DivergenceError("training diverged in epoch " + std::to_string(epoch + 1) + ": non-finite loss");
    }
    loss_sum += g.mean_loss * static_cast<double>(count);
    correct += g.correct;
    try {
      adam_step(adam, model, g.params);
    } catch (const NonFiniteError& e) {
      throw DivergenceError("optimizer produced non-finite parameters in epoch " + std::to_string(epoch + 1));
    }
  }
  EpochStats s;
  s.epoch = epoch + 1;
  s.train_loss = loss_sum / static_cast<double>(n);
  s.train_accuracy = static_cast<double>(correct) / static_cast<double>(n);
  const auto val_labels = val_data.labels();
  const auto vp = predictions(model, val_data, config.threads);
  double vloss = 0.0;
  for (std::size_t i = 0; i < vp.size(); ++i) vloss += bce_loss(vp[i], val_labels[i]);
  s.val_loss = vloss / static_cast<double>(vp.size());
  s.val_accuracy = compute_metrics(vp, val_labels).accuracy;
  if (config.on_epoch) config.on_epoch(s);
  return s;
}

}  // namespace

std::vector<EpochStats> train(Model& model, const Dataset& train_data, const Dataset& val_data,
                              const TrainConfig& config) {
  check_training_inputs(train_data, val_data, config);
  AdamState adam(config.adam);
  std::vector<EpochStats> history;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    history.push_back(run_epoch(model, train_data, val_data, config, adam, epoch));
  }
  return history;
}

void write_history_csv(const std::vector<EpochStats>& history, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "epoch,train_loss,train_accuracy,val_loss,val_accuracy\n";
  char buf[160];
  for (const auto& s : history) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g\n", s.epoch, s.train_loss, s.train_accuracy,
                  s.val_loss, s.val_accuracy);
    out << buf;
  }
}

// ---------------------------------------------------------------------------
// Adversarial training

std::string adv_mode_name(AdvTrainMode mode) {
  switch (mode) {
    case AdvTrainMode::kOff:
      return "off";
    case AdvTrainMode::kUnion:
      return "union";
    case AdvTrainMode::kReplace:
      return "replace";
  }
  return "?";
}

AdvTrainMode parse_adv_mode(const std::string& name) {
  if (name == "off") return AdvTrainMode::kOff;
  if (name == "union") return AdvTrainMode::kUnion;
  if (name == "replace") return AdvTrainMode::kReplace;
  throw std::invalid_argument("unknown adversarial training mode '" + name + "' (expected off, union or replace)");
}

namespace {

Dataset adversarial_set(const Dataset& train_data, AttackedDataset attacked, AdvTrainMode mode) {
  Dataset set;
  set.split = "train";
  set.provenance = attacked.adversarial.provenance + " mode=" + adv_mode_name(mode);
  if (mode == AdvTrainMode::kUnion) set.records = train_data.records;
  for (auto& r : attacked.adversarial.records) {
    set.records.push_back({r.id + "#adv", std::move(r.pixels), r.label});
  }
  return set;
}

}  // namespace

AdvTrainResult adversarial_train(const Model& model, const Dataset& train_data, const Dataset& val_data,
                                 const AdvTrainConfig& config) {
  if (config.mode == AdvTrainMode::kOff) throw std::invalid_argument("adversarial training mode is off");
  check_training_inputs(train_data, val_data, config.train);
  AdvTrainResult out{config.from_scratch ? Model(model.input_shape(), model.layers(), config.init_seed) : model,
                     {}, 0, 0.0};
  AdamState adam(config.train.adam);
  Dataset set;
  // Round r attacks the training set against the model as it stands after
  // r * refresh epochs. refresh == 0 attacks once, against the input model.
  for (std::size_t epoch = 0; epoch < config.train.epochs; ++epoch) {
    const bool regenerate = epoch == 0 || (config.refresh > 0 && epoch % config.refresh == 0);
    if (regenerate) {
      const std::size_t round = config.refresh > 0 ? epoch / config.refresh : 0;
      const Model& target = epoch == 0 ? model : out.defended;
      const std::uint64_t seed = round == 0 ? config.attack_seed : derive_seed(config.attack_seed, round);
      auto attacked = attack_dataset(target, train_data, config.attack, seed, config.train.threads);
      if (epoch == 0) out.train_success_rate = attacked.success_rate;
      set = adversarial_set(train_data, std::move(attacked), config.mode);
      out.training_set_size = set.size();
    }
    out.history.push_back(run_epoch(out.defended, set, val_data, config.train, adam, epoch));
  }
  if (config.train.epochs == 0) {
    out.training_set_size = (config.mode == AdvTrainMode::kUnion ? 2 : 1) * train_data.size();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Experiment configuration

namespace {

std::string style_tag(SyntheticStyle s) { return synthetic_style_name(s); }

std::string attack_display(std::optional<AttackFamily> f) {
  if (!f) return "Base";
  switch (*f) {
    case AttackFamily::kFgsm:
      return "FGSM";
    case AttackFamily::kPgd:
      return "PGD";
    case AttackFamily::kDeepFool:
      return "DeepFool";
  }
  return "?";
}

template <typename T>
T get_as(const json& j, const std::string& key) {
  try {
    return j.get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + key + "' has the wrong type: " + j.dump());
  }
}

bool get_bool(const json& j, const std::string& key) {
  if (j.is_boolean()) return j.get<bool>();
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "on" || s == "true" || s == "yes") return true;
    if (s == "off" || s == "false" || s == "no") return false;
  }
  throw ConfigError("config key '" + key + "' must be a boolean or on/off, got " + j.dump());
}

std::uint64_t get_u64(const json& j, const std::string& key) {
  if (j.is_number_unsigned()) return j.get<std::uint64_t>();
  if (j.is_number_integer() && j.get<long long>() >= 0) return static_cast<std::uint64_t>(j.get<long long>());
  throw ConfigError("config key '" + key + "' must be a non-negative integer, got " + j.dump());
}

std::size_t get_size(const json& j, const std::string& key) { return static_cast<std::size_t>(get_u64(j, key)); }

double get_double(const json& j, const std::string& key) {
  if (!j.is_number()) throw ConfigError("config key '" + key + "' must be a number, got " + j.dump());
  return j.get<double>();
}

template <typename F>
auto wrap(const std::string& key, F f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError("config key '" + key + "': " + e.what());
  }
}

}  // namespace

std::uint64_t ExperimentConfig::resolved_seed(const char* purpose) const {
  const std::string p = purpose;
  const std::optional<std::uint64_t>* slot = p == "data"      ? &data_seed
                                             : p == "split"   ? &split_seed
                                             : p == "model"   ? &model_seed
                                             : p == "train"   ? &train_seed
                                             : p == "augment" ? &augment_seed
                                             : p == "attack"  ? &attack_seed
                                                              : nullptr;
  if (!slot) throw std::logic_error("unknown seed purpose " + p);
  return slot->has_value() ? **slot : derive_seed(seed, fnv1a64(p));
}

std::optional<AttackConfig> ExperimentConfig::attack_config() const {
  if (!attack) return std::nullopt;
  AttackConfig c = AttackConfig::defaults(*attack, epsilon);
  if (alpha) c.alpha = *alpha;
  if (steps) c.steps = *steps;
  if (norm) c.norm = *norm;
  c.random_start = random_start;
  c.overshoot = overshoot;
  c.clip = clip;
  c.targeted = targeted;
  c.target = target;
  return c;
}

TrainConfig ExperimentConfig::train_config() const {
  TrainConfig t;
  t.epochs = epochs;
  t.batch_size = batch_size;
  t.adam = adam;
  t.augment = augment;
  t.augment_config = augment_config;
  t.augment_config.seed = resolved_seed("augment");
  t.seed = resolved_seed("train");
  t.threads = threads;
  return t;
}

std::string ExperimentConfig::tag() const {
  if (!model_tag.empty()) return model_tag;
  return data == "synthetic" ? style_tag(synthetic_style) : "custom";
}

json ExperimentConfig::to_json() const {
  json j;
  j["name"] = name;
  j["model_tag"] = tag();
  j["data"] = data;
  j["synthetic_style"] = synthetic_style_name(synthetic_style);
  j["synthetic_noise"] = synthetic_noise;
  j["train_size"] = train_size;
  j["val_size"] = val_size;
  j["test_size"] = test_size;
  j["split_train"] = fractions.train;
  j["split_val"] = fractions.val;
  j["split_test"] = fractions.test;
  j["seed"] = seed;
  for (const char* p : {"data", "split", "model", "train", "augment", "attack"}) {
    j[std::string(p) + "_seed"] = resolved_seed(p);
  }
  j["hidden_activation"] = activation_name(hidden);
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["lr"] = adam.lr;
  j["beta1"] = adam.beta1;
  j["beta2"] = adam.beta2;
  j["adam_eps"] = adam.eps;
  j["augment"] = augment;
  j["rotation_range"] = augment_config.rotation_range;
  j["width_shift"] = augment_config.width_shift;
  j["height_shift"] = augment_config.height_shift;
  j["shear_range"] = augment_config.shear_range;
  j["zoom_range"] = augment_config.zoom_range;
  j["horizontal_flip"] = augment_config.horizontal_flip;
  j["attack"] = attack ? attack_family_name(*attack) : "none";
  j["epsilon"] = epsilon;
  const auto ac = attack_config();
  j["alpha"] = ac ? json(ac->alpha) : (alpha ? json(*alpha) : json(nullptr));
  j["steps"] = ac ? json(ac->steps) : (steps ? json(*steps) : json(nullptr));
  j["norm"] = ac ? json(norm_name(ac->norm)) : (norm ? json(norm_name(*norm)) : json(nullptr));
  j["random_start"] = random_start;
  j["overshoot"] = overshoot;
  j["clip"] = clip;
  j["targeted"] = targeted;
  j["target"] = label_name(target);
  j["adv_mode"] = adv_mode_name(adv_mode);
  j["adv_epochs"] = adv_epochs;
  j["adv_refresh"] = adv_refresh;
  j["adv_from_scratch"] = adv_from_scratch;
  j["threads"] = threads;
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) { return from_json(j, ExperimentConfig{}); }

ExperimentConfig ExperimentConfig::from_json(const json& j, ExperimentConfig c) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object of key/value pairs");
  for (const auto& [key, v] : j.items()) {
    const bool null = v.is_null();
    if (key == "name") c.name = get_as<std::string>(v, key);
    else if (key == "model_tag") c.model_tag = get_as<std::string>(v, key);
    else if (key == "data") c.data = get_as<std::string>(v, key);
    else if (key == "synthetic_style") c.synthetic_style = wrap(key, [&] { return parse_synthetic_style(get_as<std::string>(v, key)); });
    else if (key == "synthetic_noise") c.synthetic_noise = get_double(v, key);
    else if (key == "train_size") c.train_size = get_size(v, key);
    else if (key == "val_size") c.val_size = get_size(v, key);
    else if (key == "test_size") c.test_size = get_size(v, key);
    else if (key == "split_train") c.fractions.train = get_double(v, key);
    else if (key == "split_val") c.fractions.val = get_double(v, key);
    else if (key == "split_test") c.fractions.test = get_double(v, key);
    else if (key == "seed") c.seed = get_u64(v, key);
    else if (key == "data_seed") c.data_seed = null ? std::nullopt : std::optional(get_u64(v, key));
    else if (key == "split_seed") c.split_seed = null ? std::nullopt : std::optional(get_u64(v, key));
    else if (key == "model_seed") c.model_seed = null ? std::nullopt : std::optional(get_u64(v, key));
    else if (key == "train_seed") c.train_seed = null ? std::nullopt : std::optional(get_u64(v, key));
    else if (key == "augment_seed") c.augment_seed = null ? std::nullopt : std::optional(get_u64(v, key));
    else if (key == "attack_seed") c.attack_seed = null ? std::nullopt : std::optional(get_u64(v, key));
    else if (key == "hidden_activation") c.hidden = wrap(key, [&] { return parse_activation(get_as<std::string>(v, key)); });
    else if (key == "epochs") c.epochs = get_size(v, key);
    else if (key == "batch_size") c.batch_size = get_size(v, key);
    else if (key == "lr") c.adam.lr = get_double(v, key);
    else if (key == "beta1") c.adam.beta1 = get_double(v, key);
    else if (key == "beta2") c.adam.beta2 = get_double(v, key);
    else if (key == "adam_eps") c.adam.eps = get_double(v, key);
    else if (key == "augment") c.augment = get_bool(v, key);
    else if (key == "rotation_range") c.augment_config.rotation_range = get_double(v, key);
    else if (key == "width_shift") c.augment_config.width_shift = get_double(v, key);
    else if (key == "height_shift") c.augment_config.height_shift = get_double(v, key);
    else if (key == "shear_range") c.augment_config.shear_range = get_double(v, key);
    else if (key == "zoom_range") c.augment_config.zoom_range = get_double(v, key);
    else if (key == "horizontal_flip") c.augment_config.horizontal_flip = get_bool(v, key);
    else if (key == "attack") {
      const auto s = get_as<std::string>(v, key);
      c.attack = s == "none" || s == "base" ? std::nullopt : std::optional(wrap(key, [&] { return parse_attack_family(s); }));
    } else if (key == "epsilon") c.epsilon = get_double(v, key);
    else if (key == "alpha") c.alpha = null ? std::nullopt : std::optional(get_double(v, key));
    else if (key == "steps") c.steps = null ? std::nullopt : std::optional(static_cast<int>(get_size(v, key)));
    else if (key == "norm") c.norm = null ? std::nullopt : std::optional(wrap(key, [&] { return parse_norm(get_as<std::string>(v, key)); }));
    else if (key == "random_start") c.random_start = get_bool(v, key);
    else if (key == "overshoot") c.overshoot = get_double(v, key);
    else if (key == "clip") c.clip = get_bool(v, key);
    else if (key == "targeted") c.targeted = get_bool(v, key);
    else if (key == "target") c.target = wrap(key, [&] { return parse_label(get_as<std::string>(v, key)); });
    else if (key == "adv_mode") c.adv_mode = wrap(key, [&] { return parse_adv_mode(get_as<std::string>(v, key)); });
    else if (key == "adv_epochs") c.adv_epochs = get_size(v, key);
    else if (key == "adv_refresh") c.adv_refresh = get_size(v, key);
    else if (key == "adv_from_scratch") c.adv_from_scratch = get_bool(v, key);
    else if (key == "threads") c.threads = static_cast<int>(get_size(v, key));
    else throw ConfigError("unknown config key '" + key + "'");
  }
  return c;
}

namespace {

std::string hash_keys(const json& full, std::initializer_list<const char*> keys) {
  json sub = json::object();
  for (const char* k : keys) sub[k] = full.at(k);
  return hex64(fnv1a64(sub.dump()));
}

}  // namespace

std::string ExperimentConfig::hash() const {
  json j = to_json();
  j.erase("name");
  j.erase("model_tag");
  j.erase("threads");
  return hex64(fnv1a64(j.dump()));
}

std::string ExperimentConfig::data_hash() const {
  return hash_keys(to_json(), {"data", "synthetic_style", "synthetic_noise", "train_size", "val_size", "test_size",
                               "split_train", "split_val", "split_test", "data_seed", "split_seed"});
}

std::string ExperimentConfig::base_hash() const {
  return hash_keys(to_json(), {"data", "synthetic_style", "synthetic_noise", "train_size", "val_size", "test_size",
                               "split_train", "split_val", "split_test", "data_seed", "split_seed", "model_seed",
                               "train_seed", "augment_seed", "hidden_activation", "epochs", "batch_size", "lr",
                               "beta1", "beta2", "adam_eps", "augment", "rotation_range", "width_shift",
                               "height_shift", "shear_range", "zoom_range", "horizontal_flip"});
}

void ExperimentConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (threads < 1) throw ConfigError("threads must be >= 1");
  if (data == "synthetic" && (train_size < 2 || val_size < 2 || test_size < 2)) {
    throw ConfigError("synthetic split sizes must each be at least 2");
  }
  if (!(adam.lr > 0.0) || !(adam.eps > 0.0) || !(adam.beta1 >= 0.0 && adam.beta1 < 1.0) ||
      !(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
    throw ConfigError("Adam hyperparameters out of range");
  }
  wrap("augment", [&] {
    augment_config.validate();
    return 0;
  });
  if (const auto ac = attack_config()) {
    wrap("attack", [&] {
      ac->validate();
      return 0;
    });
  }
}

DatasetSplits build_splits(const ExperimentConfig& c) {
  if (c.data == "synthetic") {
    SyntheticConfig sc;
    sc.style = c.synthetic_style;
    sc.noise = c.synthetic_noise;
    sc.seed = c.resolved_seed("data");
    const std::size_t total = c.train_size + c.val_size + c.test_size;
    const Dataset all = generate_synthetic(sc, (total + 1) / 2);
    const auto t = static_cast<double>(total);
    const SplitFractions f{static_cast<double>(c.train_size) / t, static_cast<double>(c.val_size) / t,
                           static_cast<double>(c.test_size) / t};
    return split_dataset(all, f, c.resolved_seed("split"));
  }
  LoadOptions opt;
  opt.threads = c.threads;
  return split_dataset(load_directory(c.data, opt), c.fractions, c.resolved_seed("split"));
}

// ---------------------------------------------------------------------------
// Reports

namespace {

const std::vector<std::string> kMetricFields = {"accuracy", "precision", "recall", "f1", "tp", "fp", "tn", "fn"};

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void put_metrics(std::vector<std::string>& cells, const std::optional<Metrics>& m) {
  if (!m) {
    cells.insert(cells.end(), kMetricFields.size(), "");
    return;
  }
  for (double v : {m->accuracy, m->precision, m->recall, m->f1}) cells.push_back(fmt(v));
  for (std::size_t v : {m->tp, m->fp, m->tn, m->fn}) cells.push_back(std::to_string(v));
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch == '\n' ? ' ' : ch;
  }
  return out + "\"";
}

std::vector<std::string> csv_split(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      cells.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  cells.push_back(cur);
  return cells;
}

std::vector<std::string> report_header() {
  std::vector<std::string> h = {"config_hash", "name", "model", "augmented", "attack", "attack_config", "status"};
  for (const char* prefix : {"clean_", "before_", "after_", "defended_clean_"}) {
    for (const auto& f : kMetricFields) h.push_back(prefix + f);
  }
  for (const char* extra : {"success_rate_before", "success_rate_after", "loss_before", "error"}) h.push_back(extra);
  return h;
}

}  // namespace

std::string report_csv(const ExperimentReport& report) {
  std::string out;
  const auto header = report_header();
  for (std::size_t i = 0; i < header.size(); ++i) out += (i ? "," : "") + header[i];
  out += '\n';
  for (const auto& r : report.rows) {
    std::vector<std::string> cells = {r.config_hash, r.name,          r.model_tag, r.augmented ? "1" : "0",
                                      r.attack,      r.attack_detail, r.status};
    put_metrics(cells, r.status == "ok" ? std::optional(r.clean) : std::nullopt);
    put_metrics(cells, r.before);
    put_metrics(cells, r.after);
    put_metrics(cells, r.defended_clean);
    const bool adv = r.before.has_value();
    cells.push_back(adv ? fmt(r.success_before) : "");
    cells.push_back(r.after ? fmt(r.success_after) : "");
    cells.push_back(adv ? fmt(r.loss_before) : "");
    cells.push_back(r.error);
    for (std::size_t i = 0; i < cells.size(); ++i) out += (i ? "," : "") + csv_escape(cells[i]);
    out += '\n';
  }
  return out;
}

ExperimentReport parse_report_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty report");
  const auto header = report_header();
  if (csv_split(line) != header) throw DataError("not a report CSV (header mismatch)");
  ExperimentReport report;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto c = csv_split(line);
    if (c.size() != header.size()) throw DataError("report row has " + std::to_string(c.size()) + " fields");
    ReportRow r;
    r.config_hash = c[0];
    r.name = c[1];
    r.model_tag = c[2];
    r.augmented = c[3] == "1";
    r.attack = c[4];
    r.attack_detail = c[5];
    r.status = c[6];
    auto metrics_at = [&](std::size_t pos) -> std::optional<Metrics> {
      if (c[pos].empty()) return std::nullopt;
      return Metrics::from_counts(std::stoull(c[pos + 4]), std::stoull(c[pos + 5]), std::stoull(c[pos + 6]),
                                  std::stoull(c[pos + 7]));
    };
    const std::size_t w = kMetricFields.size();
    if (auto m = metrics_at(7)) r.clean = *m;
    r.before = metrics_at(7 + w);
    r.after = metrics_at(7 + 2 * w);
    r.defended_clean = metrics_at(7 + 3 * w);
    const std::size_t tail = 7 + 4 * w;
    if (!c[tail].empty()) r.success_before = std::stod(c[tail]);
    if (!c[tail + 1].empty()) r.success_after = std::stod(c[tail + 1]);
    if (!c[tail + 2].empty()) r.loss_before = std::stod(c[tail + 2]);
    r.error = c[tail + 3];
    report.rows.push_back(std::move(r));
  }
  return report;
}

std::string report_markdown(const ExperimentReport& report) {
  auto pct = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
    return std::string(buf);
  };
  std::vector<std::vector<std::string>> table = {
      {"Model", "D.A", "Config", "Accuracy", "Precision", "Recall", "F-1 Score", "Config hash"}};
  for (const auto& r : report.rows) {
    std::vector<std::string> row = {r.model_tag, r.augmented ? "W/" : "W/O", r.attack};
    if (r.status != "ok") {
      row.insert(row.end(), {"error: " + r.error, "", "", ""});
    } else if (!r.before) {
      row.insert(row.end(), {pct(r.clean.accuracy), pct(r.clean.precision), pct(r.clean.recall), pct(r.clean.f1)});
    } else {
      const Metrics& shown = r.after ? *r.after : *r.before;
      const std::string acc = (r.after ? pct(r.after->accuracy) + " " : std::string()) + "(" +
                              pct(r.before->accuracy) + ")";
      row.insert(row.end(), {acc, pct(shown.precision), pct(shown.recall), pct(shown.f1)});
    }
    row.push_back(r.config_hash);
    table.push_back(std::move(row));
  }
  std::vector<std::size_t> width(table[0].size(), 0);
  for (const auto& row : table) {
    for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
  }
  std::string out;
  auto emit = [&](const std::vector<std::string>& row) {
    out += "|";
    for (std::size_t i = 0; i < row.size(); ++i) out += " " + row[i] + std::string(width[i] - row[i].size(), ' ') + " |";
    out += "\n";
  };
  emit(table[0]);
  out += "|";
  for (std::size_t w : width) out += std::string(w + 2, '-') + "|";
  out += "\n";
  for (std::size_t i = 1; i < table.size(); ++i) emit(table[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Experiments

namespace {

std::shared_ptr<const DatasetSplits> get_splits(const ExperimentConfig& c, ExperimentCache* cache) {
  const std::string key = c.data_hash();
  if (cache) {
    std::lock_guard lock(cache->mutex);
    if (auto it = cache->splits.find(key); it != cache->splits.end()) return it->second;
  }
  auto splits = std::make_shared<const DatasetSplits>(build_splits(c));
  if (cache) {
    std::lock_guard lock(cache->mutex);
    cache->splits.emplace(key, splits);
  }
  return splits;
}

std::shared_ptr<const BaseModel> get_base(const ExperimentConfig& c, const DatasetSplits& splits,
                                          ExperimentCache* cache) {
  const std::string key = c.base_hash();
  if (cache) {
    std::lock_guard lock(cache->mutex);
    if (auto it = cache->bases.find(key); it != cache->bases.end()) return it->second;
  }
  Model model = build_paper_model(100, 100, c.resolved_seed("model"), c.hidden);
  auto history = train(model, splits.train, splits.val, c.train_config());
  auto base = std::make_shared<const BaseModel>(BaseModel{std::move(model), std::move(history)});
  if (cache) {
    std::lock_guard lock(cache->mutex);
    cache->bases.emplace(key, base);
  }
  return base;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

}  // namespace

ExperimentOutcome run_experiment(const ExperimentConfig& c, const fs::path& out_dir, ExperimentCache* cache) {
  c.validate();
  const auto splits = get_splits(c, cache);
  ExperimentOutcome out;
  out.base = get_base(c, *splits, cache);
  const Model& base = out.base->model;

  ReportRow& row = out.row;
  row.config_hash = c.hash();
  row.name = c.name;
  row.model_tag = c.tag();
  row.augmented = c.augment;
  row.attack = attack_display(c.attack);
  row.clean = evaluate(base, splits->test, c.threads);

  const fs::path dir = out_dir.empty() ? fs::path() : out_dir / (c.name + "-" + row.config_hash);
  if (!dir.empty()) {
    write_text(dir / "config.json", c.to_json().dump(2) + "\n");
    save_model(base, dir / "base_model.rsnm");
    write_history_csv(out.base->history, dir / "history.csv");
  }

  if (const auto ac = c.attack_config()) {
    row.attack_detail = ac->tag();
    const std::uint64_t attack_seed = c.resolved_seed("attack");
    const std::uint64_t test_seed = derive_seed(attack_seed, 1);
    const auto before = attack_dataset(base, splits->test, *ac, test_seed, c.threads);
    row.before = evaluate(base, before.adversarial, c.threads);
    row.success_before = before.success_rate;
    row.loss_before = before.mean_adversarial_loss;
    if (!dir.empty()) write_attack_manifest(dir / "attack_before.csv", before, *ac, test_seed);

    if (c.adv_mode != AdvTrainMode::kOff) {
      AdvTrainConfig adv;
      adv.attack = *ac;
      adv.mode = c.adv_mode;
      adv.train = c.train_config();
      adv.train.epochs = c.adv_epochs;
      adv.train.seed = derive_seed(adv.train.seed, 0xad7);
      adv.attack_seed = derive_seed(attack_seed, 0);
      adv.from_scratch = c.adv_from_scratch;
      adv.init_seed = c.resolved_seed("model");
      adv.refresh = c.adv_refresh;
      auto result = adversarial_train(base, splits->train, splits->val, adv);
      const auto after = attack_dataset(result.defended, splits->test, *ac, test_seed, c.threads);
      row.after = evaluate(result.defended, after.adversarial, c.threads);
      row.success_after = after.success_rate;
      row.defended_clean = evaluate(result.defended, splits->test, c.threads);
      if (!dir.empty()) {
        save_model(result.defended, dir / "defended_model.rsnm");
        write_history_csv(result.history, dir / "adv_history.csv");
        write_attack_manifest(dir / "attack_after.csv", after, *ac, test_seed);
      }
      out.adv_history = std::move(result.history);
      out.defended = std::move(result.defended);
    }
  }
  return out;
}

ExperimentReport run_grid(const std::vector<ExperimentConfig>& configs, const fs::path& out_dir,
                          const GridOptions& options) {
  ExperimentCache cache;
  ExperimentReport report;
  report.rows.resize(configs.size());
  std::mutex log_mutex;
  auto log = [&](const std::string& msg) {
    if (!options.log) return;
    std::lock_guard lock(log_mutex);
    options.log(msg);
  };

  // Train each distinct base model once, then run the rows.
  std::vector<std::size_t> first_of_base;
  std::set<std::string> seen;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    try {
      configs[i].validate();
      if (seen.insert(configs[i].base_hash()).second) first_of_base.push_back(i);
    } catch (const std::exception&) {
      // Reported when the row itself runs.
    }
  }
  parallel_for(first_of_base.size(), options.row_threads, [&](std::size_t k) {
    const auto& c = configs[first_of_base[k]];
    log("training base model " + c.base_hash() + " (" + c.tag() + (c.augment ? ", augmented" : "") + ")");
    try {
      const auto splits = get_splits(c, &cache);
      get_base(c, *splits, &cache);
    } catch (const std::exception&) {
      // The row run repeats the work and records the error.
    }
  });
  parallel_for(configs.size(), options.row_threads, [&](std::size_t i) {
    const auto& c = configs[i];
    log("row " + std::to_string(i + 1) + "/" + std::to_string(configs.size()) + ": " + c.name);
    try {
      report.rows[i] = run_experiment(c, out_dir, &cache).row;
    } catch (const std::exception& e) {
      ReportRow& r = report.rows[i];
      r.name = c.name;
      r.model_tag = c.tag();
      r.augmented = c.augment;
      r.attack = attack_display(c.attack);
      try {
        r.config_hash = c.hash();
      } catch (const std::exception&) {
        r.config_hash = "invalid";
      }
      r.status = "error";
      r.error = e.what();
      log("row " + std::to_string(i + 1) + " failed: " + e.what());
    }
  });
  if (!out_dir.empty()) {
    write_text(out_dir / "report.csv", report_csv(report));
    write_text(out_dir / "report.md", report_markdown(report));
  }
  return report;
}

std::vector<ExperimentConfig> load_grid(const json& doc, const ExperimentConfig& base) {
  ExperimentConfig defaults = base;
  const json* list = &doc;
  if (doc.is_object()) {
    for (const auto& [key, v] : doc.items()) {
      if (key != "defaults" && key != "configs") throw ConfigError("unknown grid key '" + key + "'");
    }
    if (doc.contains("defaults")) defaults = ExperimentConfig::from_json(doc.at("defaults"), defaults);
    if (!doc.contains("configs")) throw ConfigError("grid file needs a \"configs\" list");
    list = &doc.at("configs");
  }
  if (!list->is_array()) throw ConfigError("grid configs must be a list of objects");
  std::vector<ExperimentConfig> out;
  for (const auto& item : *list) out.push_back(ExperimentConfig::from_json(item, defaults));
  return out;
}

}  // namespace sleepguard
