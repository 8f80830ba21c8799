#include "sleepguard/attacks.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "sleepguard/parallel.hpp"

namespace sleepguard {

std::string attack_family_name(AttackFamily family) {
  switch (family) {
    case AttackFamily::kFgsm:
      return "fgsm";
    case AttackFamily::kPgd:
      return "pgd";
    case AttackFamily::kDeepFool:
      return "deepfool";
  }
  return "?";
}

AttackFamily parse_attack_family(const std::string& name) {
  if (name == "fgsm") return AttackFamily::kFgsm;
  if (name == "pgd") return AttackFamily::kPgd;
  if (name == "deepfool") return AttackFamily::kDeepFool;
  throw std::invalid_argument("unknown attack '" + name + "' (expected fgsm, pgd or deepfool)");
}

AttackConfig AttackConfig::defaults(AttackFamily family, double epsilon) {
  AttackConfig c;
  c.family = family;
  c.epsilon = epsilon;
  c.alpha = epsilon / 4.0;
  switch (family) {
    case AttackFamily::kFgsm:
      c.steps = 1;
      break;
    case AttackFamily::kPgd:
      c.steps = 10;
      break;
    case AttackFamily::kDeepFool:
      c.steps = 50;
      c.norm = Norm::kL2;
      break;
  }
  return c;
}

void AttackConfig::validate() const {
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw std::invalid_argument("epsilon must be finite and >= 0");
  if (steps < 1) throw std::invalid_argument("attack steps must be >= 1");
  if (!(overshoot >= 0.0)) throw std::invalid_argument("overshoot must be >= 0");
  if (target != kOpen && target != kClosed) throw std::invalid_argument("target label must be 0 or 1");
  if (family == AttackFamily::kPgd) {
    if (!(alpha > 0.0)) throw std::invalid_argument("PGD step size alpha must be > 0");
    if (alpha > 2.0 * epsilon) throw std::invalid_argument("PGD alpha must not exceed 2 * epsilon");
  }
}

std::string AttackConfig::tag() const {
  std::ostringstream os;
  os << attack_family_name(family) << "(";
  if (family == AttackFamily::kDeepFool) {
    os << "overshoot=" << overshoot << ",max_iter=" << steps;
  } else {
    os << "eps=" << epsilon;
    if (family == AttackFamily::kPgd) os << ",alpha=" << alpha << ",steps=" << steps;
  }
  os << "," << norm_name(norm) << ")";
  return os.str();
}

Tensor project_onto_ball(const Tensor& candidate, const Tensor& center, double epsilon, Norm norm) {
  if (!(epsilon >= 0.0)) throw std::invalid_argument("projection radius must be >= 0");
  Tensor d = sub(candidate, center);
  if (norm == Norm::kLinf) {
    for (double& v : d.mutable_data()) v = std::clamp(v, -epsilon, epsilon);
    return add(center, d);
  }
  const double n = sleepguard::norm(d, Norm::kL2);
  if (n <= epsilon) return candidate;
  return add(center, scale(d, epsilon / n));
}

Tensor steepest_ascent_direction(const Tensor& gradient, Norm norm) {
  if (norm == Norm::kLinf) return sign(gradient);
  const double n = sleepguard::norm(gradient, Norm::kL2);
  if (n == 0.0) throw DegenerateGradientError("zero gradient has no l2 ascent direction");
  return scale(gradient, 1.0 / n);
}

namespace {

int predicted_class(double prediction) { return prediction >= 0.5 ? kClosed : kOpen; }

void maybe_clip(Tensor& t, const AttackConfig& config) {
  if (!config.clip) return;
  for (double& v : t.mutable_data()) v = std::clamp(v, 0.0, 1.0);
}

void finish(AttackResult& r, const Model& model, const Tensor& x, int label, const AttackConfig& config,
            std::optional<double> known_prediction = std::nullopt) {
  r.adversarial_prediction = known_prediction ? *known_prediction : predict(model, r.adversarial);
  r.adversarial_loss = bce_loss(r.adversarial_prediction, label);
  r.perturbation_norm = norm(sub(r.adversarial, x), config.norm);
  r.label_flipped = predicted_class(r.original_prediction) != predicted_class(r.adversarial_prediction);
}

}  // namespace

Tensor fgsm_perturbation(const Model& model, const Tensor& x, int label, const AttackConfig& config) {
  const InputGradient g = input_gradient(model, x, config.targeted ? config.target : label);
  const double step = config.targeted ? -config.epsilon : config.epsilon;
  return scale(steepest_ascent_direction(g.gradient, config.norm), step);
}

AttackResult fgsm_attack(const Model& model, const Tensor& x, int label, const AttackConfig& config) {
  config.validate();
  AttackResult r;
  const InputGradient g = input_gradient(model, x, config.targeted ? config.target : label);
  r.original_prediction = g.prediction;
  r.iterations = 1;
  Tensor direction;
  try {
    direction = steepest_ascent_direction(g.gradient, config.norm);
  } catch (const DegenerateGradientError&) {
    r.degenerate = true;
    r.adversarial = x;
    finish(r, model, x, label, config, g.prediction);
    return r;
  }
  r.adversarial = x;
  axpy_inplace(r.adversarial, config.targeted ? -config.epsilon : config.epsilon, direction);
  maybe_clip(r.adversarial, config);
  finish(r, model, x, label, config);
  return r;
}

AttackResult pgd_attack(const Model& model, const Tensor& x, int label, const AttackConfig& config, Rng& rng) {
  config.validate();
  AttackResult r;
  r.original_prediction = predict(model, x);
  Tensor xi = x;
  if (config.random_start && config.epsilon > 0.0) {
    auto d = xi.mutable_data();
    if (config.norm == Norm::kLinf) {
      for (double& v : d) v += rng.uniform(-config.epsilon, config.epsilon);
    } else {
      // Uniform in the l2 ball: Gaussian direction, radius eps * u^(1/n).
      Tensor dir(x.shape());
      for (double& v : dir.mutable_data()) v = rng.normal();
      const double radius = config.epsilon * std::pow(rng.uniform(), 1.0 / static_cast<double>(x.numel()));
      const double n = norm(dir, Norm::kL2);
      if (n > 0.0) axpy_inplace(xi, radius / n, dir);
    }
    xi = project_onto_ball(xi, x, config.epsilon, config.norm);
    maybe_clip(xi, config);
  }
  for (int step = 0; step < config.steps; ++step) {
    const InputGradient g = input_gradient(model, xi, label);
    Tensor direction;
    try {
      direction = steepest_ascent_direction(g.gradient, config.norm);
    } catch (const DegenerateGradientError&) {
      r.degenerate = true;
      break;
    }
    axpy_inplace(xi, config.alpha, direction);
    xi = project_onto_ball(xi, x, config.epsilon, config.norm);
    maybe_clip(xi, config);
    r.iterations = step + 1;
  }
  r.adversarial = std::move(xi);
  finish(r, model, x, label, config);
  return r;
}

AttackResult deepfool_attack(const Model& model, const Tensor& x, int label, const AttackConfig& config) {
  config.validate();
  AttackResult r;
  Tensor total(x.shape());
  Tensor xi = x;
  std::optional<double> last_prediction;
  for (int it = 0;; ++it) {
    const InputGradient g = logit_input_gradient(model, xi);
    if (it == 0) r.original_prediction = g.prediction;
    if (predicted_class(g.prediction) != label) {
      last_prediction = g.prediction;
      break;
    }
    if (it == config.steps) break;
    // Step to the linearized boundary f = 0.
    double denom;
    Tensor direction;
    if (config.norm == Norm::kL2) {
      denom = dot(g.gradient, g.gradient);
      direction = g.gradient;
    } else {
      denom = sum(abs(g.gradient));
      direction = sign(g.gradient);
    }
    if (denom == 0.0 || g.logit == 0.0) {
      r.degenerate = true;
      break;
    }
    axpy_inplace(total, -g.logit / denom, direction);
    xi = x;
    axpy_inplace(xi, 1.0 + config.overshoot, total);
    maybe_clip(xi, config);
    r.iterations = it + 1;
  }
  r.adversarial = std::move(xi);
  finish(r, model, x, label, config, last_prediction);
  return r;
}

AttackResult run_attack(const Model& model, const Tensor& x, int label, const AttackConfig& config,
                        std::uint64_t seed, std::uint64_t index) {
  switch (config.family) {
    case AttackFamily::kFgsm:
      return fgsm_attack(model, x, label, config);
    case AttackFamily::kPgd: {
      Rng rng = Rng::stream(seed, index);
      return pgd_attack(model, x, label, config, rng);
    }
    case AttackFamily::kDeepFool:
      return deepfool_attack(model, x, label, config);
  }
  throw std::logic_error("unhandled attack family");
}

AttackedDataset attack_dataset(const Model& model, const Dataset& data, const AttackConfig& config,
                               std::uint64_t seed, int threads) {
  if (data.empty()) throw DataError("cannot attack an empty dataset");
  config.validate();
  AttackedDataset out;
  out.results.resize(data.size());
  parallel_for(data.size(), threads, [&](std::size_t i) {
    out.results[i] = run_attack(model, data.records[i].pixels, data.records[i].label, config, seed, i);
  });
  out.adversarial.split = data.split;
  out.adversarial.provenance = data.provenance + " attack=" + config.tag() + " seed=" + std::to_string(seed);
  out.adversarial.records.reserve(data.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    auto& r = out.results[i];
    const int label = data.records[i].label;
    if (predicted_class(r.original_prediction) == label) {
      ++out.correct_before;
      if (r.label_flipped) ++out.flipped;
    }
    loss += r.adversarial_loss;
    out.adversarial.records.push_back({data.records[i].id, std::move(r.adversarial), label});
  }
  out.success_rate =
      out.correct_before ? static_cast<double>(out.flipped) / static_cast<double>(out.correct_before) : 0.0;
  out.mean_adversarial_loss = loss / static_cast<double>(data.size());
  return out;
}

void write_attack_manifest(const std::filesystem::path& path, const AttackedDataset& attacked,
                           const AttackConfig& config, std::uint64_t seed) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write attack manifest " + path.string());
  char buf[256];
  out << "# attack=" << attack_family_name(config.family) << '\n';
  std::snprintf(buf, sizeof buf, "# epsilon=%.17g\n# alpha=%.17g\n# overshoot=%.17g\n", config.epsilon,
                config.alpha, config.overshoot);
  out << buf;
  out << "# steps=" << config.steps << "\n# norm=" << norm_name(config.norm)
      << "\n# random_start=" << config.random_start << "\n# clip=" << config.clip
      << "\n# targeted=" << config.targeted << "\n# target=" << config.target << "\n# seed=" << seed << '\n';
  std::snprintf(buf, sizeof buf, "# success_rate=%.17g\n", attacked.success_rate);
  out << buf;
  out << "index,id,label,pre_pred,post_pred,norm,iterations,flipped\n";
  for (std::size_t i = 0; i < attacked.results.size(); ++i) {
    const auto& r = attacked.results[i];
    const auto& rec = attacked.adversarial.records[i];
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%d,%d", r.original_prediction, r.adversarial_prediction,
                  r.perturbation_norm, r.iterations, r.label_flipped ? 1 : 0);
    out << i << ',' << rec.id << ',' << rec.label << ',' << buf << '\n';
  }
}

}  // namespace sleepguard
