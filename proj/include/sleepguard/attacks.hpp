#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sleepguard/dataset.hpp"
#include "sleepguard/nn.hpp"
#include "sleepguard/rng.hpp"
#include "sleepguard/tensor.hpp"

namespace sleepguard {

enum class AttackFamily { kFgsm, kPgd, kDeepFool };

std::string attack_family_name(AttackFamily family);
AttackFamily parse_attack_family(const std::string& name);

/// Epsilon and alpha are in normalized pixel units ([0, 1] images).
struct AttackConfig {
  AttackFamily family = AttackFamily::kFgsm;
  double epsilon = 0.1;
  double alpha = 0.025;  // PGD step size
  int steps = 10;        // PGD iterations, DeepFool iteration cap
  Norm norm = Norm::kLinf;
  bool random_start = true;  // PGD
  double overshoot = 0.02;   // DeepFool
  bool clip = true;          // keep pixels in [0, 1]
  bool targeted = false;     // FGSM: descend the loss toward `target`
  int target = kClosed;

  /// Per-family defaults: FGSM and PGD use linf with alpha = epsilon / 4 and
  /// 10 steps; DeepFool uses l2 with at most 50 iterations.
  static AttackConfig defaults(AttackFamily family, double epsilon = 0.1);

  void validate() const;
  std::string tag() const;  // short human-readable label, e.g. "fgsm(eps=0.1,linf)"
};

struct AttackResult {
  Tensor adversarial;
  double perturbation_norm = 0.0;  // norm(adversarial - x, config.norm)
  int iterations = 0;
  bool label_flipped = false;  // 0.5-threshold class changed
  double original_prediction = 0.0;
  double adversarial_prediction = 0.0;
  double adversarial_loss = 0.0;  // BCE at the adversarial image w.r.t. the true label
  bool degenerate = false;        // zero gradient stopped the attack
};

/// Raised by steepest_ascent_direction for an all-zero l2 gradient.
class DegenerateGradientError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Euclidean projection of candidate onto the epsilon-ball around center.
Tensor project_onto_ball(const Tensor& candidate, const Tensor& center, double epsilon, Norm norm);

/// sign(g) for linf, g / |g|_2 for l2.
Tensor steepest_ascent_direction(const Tensor& gradient, Norm norm);

/// The unclipped FGSM step: epsilon * direction (negated when targeted).
Tensor fgsm_perturbation(const Model& model, const Tensor& x, int label, const AttackConfig& config);

AttackResult fgsm_attack(const Model& model, const Tensor& x, int label, const AttackConfig& config);

/// `rng` drives the random start; pass a per-sample stream.
AttackResult pgd_attack(const Model& model, const Tensor& x, int label, const AttackConfig& config, Rng& rng);

/// Binary DeepFool on the pre-sigmoid logit.
AttackResult deepfool_attack(const Model& model, const Tensor& x, int label, const AttackConfig& config);

/// Dispatches on config.family. PGD draws from Rng::stream(seed, index).
AttackResult run_attack(const Model& model, const Tensor& x, int label, const AttackConfig& config,
                        std::uint64_t seed, std::uint64_t index);

struct AttackedDataset {
  Dataset adversarial;  // same ids, labels and order as the input
  std::vector<AttackResult> results;  // adversarial images moved into `adversarial`
  double success_rate = 0.0;  // flipped / correctly classified before the attack
  std::size_t correct_before = 0;
  std::size_t flipped = 0;
  double mean_adversarial_loss = 0.0;
};

AttackedDataset attack_dataset(const Model& model, const Dataset& data, const AttackConfig& config,
                               std::uint64_t seed, int threads = 1);

/// Line-oriented sidecar: "# key=value" header lines for the config and
/// seed, then CSV "index,id,label,pre_pred,post_pred,norm,iterations,flipped".
void write_attack_manifest(const std::filesystem::path& path, const AttackedDataset& attacked,
                           const AttackConfig& config, std::uint64_t seed);

}  // namespace sleepguard
