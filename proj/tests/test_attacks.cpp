#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "sleepguard/attacks.hpp"

using namespace sleepguard;

namespace {

Model logistic(std::vector<double> w, double b) {
  const std::size_t n = w.size();
  std::vector<LayerParams> params(2);
  params[0] = {Tensor({1, n}, std::move(w)), Tensor({1}, std::vector<double>{b})};
  return Model({n}, {LayerSpec::dense(n, 1), LayerSpec::act(Activation::kSigmoid)}, std::move(params), 0);
}

Model conv_model(std::uint64_t seed) {
  return Model({1, 10, 10},
               {LayerSpec::conv2d(1, 4, 3), LayerSpec::act(Activation::kRelu), LayerSpec::avg_pool2d(2, 2),
                LayerSpec::flatten(), LayerSpec::dense(64, 8), LayerSpec::act(Activation::kTanh),
                LayerSpec::dense(8, 1), LayerSpec::act(Activation::kSigmoid)},
               seed);
}

Tensor random_image(Rng& rng) {
  Tensor t({10, 10});
  for (double& v : t.mutable_data()) v = rng.uniform();
  return t;
}

}  // namespace

TEST_CASE("projection onto the ball") {
  const Tensor c = Tensor::zeros({2});
  CHECK(project_onto_ball(Tensor::vector({0.3, -0.05}), c, 0.1, Norm::kLinf) == Tensor::vector({0.1, -0.05}));
  const Tensor p = project_onto_ball(Tensor::vector({3, 4}), c, 1.0, Norm::kL2);
  CHECK(p[0] == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(p[1] == doctest::Approx(0.8).epsilon(1e-15));
  const Tensor inside = Tensor::vector({0.05, -0.02});
  CHECK(project_onto_ball(inside, c, 0.1, Norm::kLinf) == inside);
  CHECK(project_onto_ball(inside, c, 0.1, Norm::kL2) == inside);
  CHECK_THROWS(project_onto_ball(inside, c, -0.1, Norm::kL2));

  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    Tensor x({17}), ctr({17});
    for (double& v : x.mutable_data()) v = rng.uniform(-5, 5);
    for (double& v : ctr.mutable_data()) v = rng.uniform(-1, 1);
    const double eps = rng.uniform(0, 2);
    for (Norm n : {Norm::kL2, Norm::kLinf}) {
      CHECK(norm(sub(project_onto_ball(x, ctr, eps, n), ctr), n) <= eps + 1e-12);
    }
  }
}

TEST_CASE("steepest ascent direction") {
  CHECK(steepest_ascent_direction(Tensor::vector({0.2, -0.7, 0}), Norm::kLinf) == Tensor::vector({1, -1, 0}));
  const Tensor d = steepest_ascent_direction(Tensor::vector({3, 4}), Norm::kL2);
  CHECK(d[0] == doctest::Approx(0.6));
  CHECK(d[1] == doctest::Approx(0.8));
  CHECK_THROWS_AS(steepest_ascent_direction(Tensor::zeros({3}), Norm::kL2), DegenerateGradientError);
}

TEST_CASE("fgsm on the logistic toy model") {
  const Model m = logistic({1, -1}, 0);
  const Tensor x = Tensor::vector({0.5, 0.5});
  const auto r = fgsm_attack(m, x, kClosed, AttackConfig::defaults(AttackFamily::kFgsm, 0.1));
  CHECK(r.adversarial[0] == doctest::Approx(0.4).epsilon(1e-15));
  CHECK(r.adversarial[1] == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(r.perturbation_norm == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(r.iterations == 1);

  // Targeted toward "open" descends the loss of label 0, which is the same
  // direction here.
  AttackConfig targeted = AttackConfig::defaults(AttackFamily::kFgsm, 0.1);
  targeted.targeted = true;
  targeted.target = kOpen;
  const auto t = fgsm_attack(m, x, kClosed, targeted);
  CHECK(t.adversarial == r.adversarial);
}

TEST_CASE("fgsm with zero epsilon is the identity") {
  const Model m = conv_model(1);
  Rng rng(2);
  for (int i = 0; i < 20; ++i) {
    const Tensor x = random_image(rng);
    const auto r = fgsm_attack(m, x, i % 2, AttackConfig::defaults(AttackFamily::kFgsm, 0.0));
    CHECK(r.adversarial == x);
    CHECK_FALSE(r.label_flipped);
    CHECK(r.perturbation_norm == 0.0);
  }
}

TEST_CASE("fgsm deltas and bounds") {
  const Model m = conv_model(5);
  Rng rng(6);
  const double eps = 0.07;
  for (int i = 0; i < 50; ++i) {
    const Tensor x = random_image(rng);
    const auto cfg = AttackConfig::defaults(AttackFamily::kFgsm, eps);
    const Tensor delta = fgsm_perturbation(m, x, i % 2, cfg);
    for (double d : delta.data()) CHECK((d == eps || d == -eps || d == 0.0));
    const auto r = fgsm_attack(m, x, i % 2, cfg);
    CHECK(r.perturbation_norm <= eps + 1e-12);
    for (double v : r.adversarial.data()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    CHECK(r.adversarial == clamp(add(x, delta), 0.0, 1.0));
  }
}

TEST_CASE("single-step pgd without random start is a projected fgsm step") {
  const Model m = conv_model(7);
  Rng rng(8);
  AttackConfig pgd = AttackConfig::defaults(AttackFamily::kPgd, 0.1);
  pgd.steps = 1;
  pgd.random_start = false;
  for (int i = 0; i < 10; ++i) {
    const Tensor x = random_image(rng);
    Rng unused(0);
    const auto r = pgd_attack(m, x, i % 2, pgd, unused);
    AttackConfig step = AttackConfig::defaults(AttackFamily::kFgsm, pgd.alpha);
    step.clip = false;
    const Tensor expected =
        clamp(project_onto_ball(fgsm_attack(m, x, i % 2, step).adversarial, x, pgd.epsilon, Norm::kLinf), 0.0, 1.0);
    CHECK(r.adversarial == expected);
  }
}

TEST_CASE("pgd stays in the ball and is seeded") {
  const Model m = conv_model(9);
  Rng data(10);
  for (Norm n : {Norm::kLinf, Norm::kL2}) {
    AttackConfig cfg = AttackConfig::defaults(AttackFamily::kPgd, n == Norm::kL2 ? 0.8 : 0.05);
    cfg.norm = n;
    for (int i = 0; i < 20; ++i) {
      const Tensor x = random_image(data);
      const auto a = run_attack(m, x, i % 2, cfg, 42, static_cast<std::uint64_t>(i));
      const auto b = run_attack(m, x, i % 2, cfg, 42, static_cast<std::uint64_t>(i));
      CHECK(a.adversarial == b.adversarial);
      CHECK(a.iterations == cfg.steps);
      CHECK(norm(sub(a.adversarial, x), n) <= cfg.epsilon + 1e-12);
      for (double v : a.adversarial.data()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
      }
    }
  }
}

TEST_CASE("pgd ascends the loss of a linear model") {
  const Model m = logistic({0.8, -1.3, 0.4, 2.0}, 0.1);
  Rng rng(11);
  AttackConfig cfg = AttackConfig::defaults(AttackFamily::kPgd, 0.1);
  cfg.random_start = false;
  for (int i = 0; i < 50; ++i) {
    Tensor x({4});
    for (double& v : x.mutable_data()) v = rng.uniform(0.2, 0.8);
    const int y = i % 2;
    const auto r = pgd_attack(m, x, y, cfg, rng);
    CHECK(r.adversarial_loss >= bce_loss(predict(m, x), y));
  }
}

TEST_CASE("deepfool on a linear model reaches the hyperplane") {
  Rng rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> w(6);
    for (double& v : w) v = rng.uniform(-2, 2);
    const double b = rng.uniform(-0.5, 0.5);
    const Model m = logistic(w, b);
    Tensor x({6});
    for (double& v : x.mutable_data()) v = rng.uniform(0, 1);
    const double f = forward(m, x).logit;
    const int y = f >= 0 ? kClosed : kOpen;
    double wn = 0;
    for (double v : w) wn += v * v;
    wn = std::sqrt(wn);

    AttackConfig exact = AttackConfig::defaults(AttackFamily::kDeepFool);
    exact.clip = false;
    exact.overshoot = 0.0;
    const auto r0 = deepfool_attack(m, x, y, exact);
    CHECK(r0.perturbation_norm == doctest::Approx(std::abs(f) / wn).epsilon(1e-9));
    CHECK(std::abs(forward(m, r0.adversarial).logit) <= 1e-12 * (1 + std::abs(f)));

    AttackConfig over = exact;
    over.overshoot = 0.02;
    const auto r = deepfool_attack(m, x, y, over);
    CHECK(r.iterations == 1);
    CHECK(r.label_flipped);
    const double f_adv = forward(m, r.adversarial).logit;
    CHECK(f_adv * f < 0);
    CHECK(std::abs(f_adv) == doctest::Approx(0.02 * std::abs(f)).epsilon(1e-6));
    CHECK(r.perturbation_norm == doctest::Approx(1.02 * std::abs(f) / wn).epsilon(1e-9));
  }
}

TEST_CASE("deepfool exits early on misclassified input") {
  const Model m = logistic({1, -1}, 0);
  const Tensor x = Tensor::vector({0.8, 0.2});  // logit 0.6, class closed
  const auto r = deepfool_attack(m, x, kOpen, AttackConfig::defaults(AttackFamily::kDeepFool));
  CHECK(r.iterations == 0);
  CHECK(r.perturbation_norm == 0.0);
  CHECK(r.adversarial == x);
}

TEST_CASE("deepfool flips a nonlinear model") {
  const Model m = conv_model(13);
  Rng rng(14);
  int flipped = 0;
  for (int i = 0; i < 20; ++i) {
    const Tensor x = random_image(rng);
    const int y = predict(m, x) >= 0.5 ? kClosed : kOpen;
    AttackConfig cfg = AttackConfig::defaults(AttackFamily::kDeepFool);
    cfg.clip = false;
    const auto r = deepfool_attack(m, x, y, cfg);
    flipped += r.label_flipped;
    CHECK(r.iterations <= cfg.steps);
  }
  CHECK(flipped == 20);
}

TEST_CASE("attack_dataset bookkeeping") {
  const Model m = conv_model(15);
  Dataset d;
  Rng rng(16);
  for (int i = 0; i < 24; ++i) d.records.push_back({"s" + std::to_string(i), random_image(rng), i % 2});

  const auto zero = attack_dataset(m, d, AttackConfig::defaults(AttackFamily::kFgsm, 0.0), 1);
  CHECK(zero.success_rate == 0.0);
  REQUIRE(zero.adversarial.size() == d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    CHECK(zero.adversarial.records[i].id == d.records[i].id);
    CHECK(zero.adversarial.records[i].label == d.records[i].label);
  }

  const auto cfg = AttackConfig::defaults(AttackFamily::kPgd, 0.2);
  const auto a = attack_dataset(m, d, cfg, 99, 1);
  const auto b = attack_dataset(m, d, cfg, 99, 3);
  for (std::size_t i = 0; i < d.size(); ++i) CHECK(a.adversarial.records[i].pixels == b.adversarial.records[i].pixels);
  CHECK(a.success_rate == b.success_rate);

  std::size_t correct = 0, flipped = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto& r = a.results[i];
    const int before = r.original_prediction >= 0.5;
    const int after = r.adversarial_prediction >= 0.5;
    CHECK(r.label_flipped == (before != after));
    if (before == d.records[i].label) {
      ++correct;
      flipped += before != after;
    }
  }
  CHECK(a.correct_before == correct);
  CHECK(a.success_rate == (correct ? static_cast<double>(flipped) / correct : 0.0));

  CHECK_THROWS_AS(attack_dataset(m, Dataset{}, cfg, 1), DataError);

  const auto path = std::filesystem::temp_directory_path() / "sleepguard_attack_manifest.csv";
  write_attack_manifest(path, a, cfg, 99);
  std::ifstream in(path);
  std::string line;
  int rows = 0;
  bool header = false;
  while (std::getline(in, line)) {
    if (line.rfind("index,", 0) == 0) header = true;
    else if (header) ++rows;
  }
  CHECK(rows == 24);
  std::filesystem::remove(path);
}

TEST_CASE("config validation") {
  AttackConfig c = AttackConfig::defaults(AttackFamily::kPgd, 0.1);
  c.alpha = 0.3;
  CHECK_THROWS(c.validate());
  c = AttackConfig::defaults(AttackFamily::kFgsm, -0.1);
  CHECK_THROWS(c.validate());
  CHECK(AttackConfig::defaults(AttackFamily::kDeepFool).norm == Norm::kL2);
  CHECK(AttackConfig::defaults(AttackFamily::kDeepFool).steps == 50);
  CHECK(AttackConfig::defaults(AttackFamily::kPgd, 0.1).alpha == 0.025);
  CHECK(parse_attack_family("deepfool") == AttackFamily::kDeepFool);
  CHECK_THROWS(parse_attack_family("cw"));
}
