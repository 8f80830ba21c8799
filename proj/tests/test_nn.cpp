#include <doctest.h>

#include <cmath>
#include <vector>

#include "sleepguard/kernels.hpp"
#include "sleepguard/model_io.hpp"
#include "sleepguard/nn.hpp"
#include "sleepguard/rng.hpp"

using namespace sleepguard;

namespace {

Model logistic(double w0, double w1, double b) {
  std::vector<LayerParams> params(2);
  params[0] = {Tensor({1, 2}, std::vector<double>{w0, w1}), Tensor({1}, std::vector<double>{b})};
  return Model({2}, {LayerSpec::dense(2, 1), LayerSpec::act(Activation::kSigmoid)},
               std::move(params), 0);
}

Model small_conv_model(std::uint64_t seed) {
  return Model({1, 12, 12},
               {LayerSpec::conv2d(1, 3, 3), LayerSpec::act(Activation::kTanh),
                LayerSpec::avg_pool2d(2, 2), LayerSpec::flatten(), LayerSpec::dense(75, 1),
                LayerSpec::act(Activation::kSigmoid)},
               seed);
}

Tensor random_image(Shape shape, Rng& rng) {
  Tensor t(shape);
  for (double& v : t.mutable_data()) v = rng.uniform();
  return t;
}

double loss_at(const Model& m, const Tensor& x, int y) { return bce_loss(predict(m, x), y); }

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

}  // namespace

TEST_CASE("classifier shapes and parameter counts") {
  const Model m = build_paper_model(100, 100, 1);
  const auto shapes = m.output_shapes();
  const std::vector<std::pair<Shape, std::size_t>> expected = {
      {{6, 98, 98}, 60},   {{6, 98, 98}, 0},  {{6, 49, 49}, 0},    {{16, 47, 47}, 880},
      {{16, 47, 47}, 0},   {{16, 23, 23}, 0}, {{8464}, 0},         {{120}, 1015800},
      {{120}, 0},          {{84}, 10164},     {{84}, 0},           {{1}, 85},
      {{1}, 0}};
  REQUIRE(shapes.size() == expected.size());
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    CHECK(shapes[i] == expected[i].first);
    CHECK(m.layers()[i].param_count() == expected[i].second);
  }
  CHECK(m.parameter_count() == 1026989);
  CHECK_THROWS_AS(build_paper_model(24, 24), ShapeError);

  const double p = predict(m, Tensor({100, 100}));
  CHECK(p > 0.0);
  CHECK(p < 1.0);
}

TEST_CASE("layer parameter counts follow the formulas") {
  CHECK(LayerSpec::conv2d(4, 7, 5).param_count() == (25 * 4 + 1) * 7);
  CHECK(LayerSpec::dense(13, 9).param_count() == 13 * 9 + 9);
  CHECK(LayerSpec::avg_pool2d().param_count() == 0);
}

TEST_CASE("model structure is validated") {
  CHECK_THROWS_AS(Model({2}, {LayerSpec::dense(2, 1)}, 0), ShapeError);
  CHECK_THROWS_AS(Model({3}, {LayerSpec::dense(2, 1), LayerSpec::act(Activation::kSigmoid)}, 0),
                  ShapeError);
  CHECK_THROWS_AS(Model({2}, {LayerSpec::dense(2, 2), LayerSpec::act(Activation::kSigmoid)}, 0),
                  ShapeError);
}

TEST_CASE("logistic model by hand") {
  const Model m = logistic(1, -1, 0);
  const Tensor x = Tensor::vector({2, 1});
  const auto f = forward(m, x, true);
  CHECK(f.prediction == doctest::Approx(0.731058578).epsilon(1e-9));
  CHECK(f.logit == 1.0);

  CHECK(bce_logit_gradient(1.0, 1) == doctest::Approx(sigmoid(1.0) - 1.0).epsilon(1e-15));
  CHECK(bce_logit_gradient(1.0, 1) == doctest::Approx(-0.268941).epsilon(1e-6));
  const Gradients g = backward(m, f.tape, 1);
  const double d = sigmoid(1.0) - 1.0;
  CHECK(g.params[0].weight[0] == doctest::Approx(d * 2));
  CHECK(g.params[0].weight[1] == doctest::Approx(d * 1));
  CHECK(g.params[0].bias[0] == doctest::Approx(d));
  CHECK(g.input[0] == doctest::Approx(d * 1));
  CHECK(g.input[1] == doctest::Approx(d * -1));

  const Gradients gl = backward_logit(m, f.tape);
  CHECK(gl.input == Tensor::vector({1, -1}));
}

TEST_CASE("zero-weight model") {
  Model m = small_conv_model(3);
  m.zero_parameters();
  Rng rng(5);
  const Tensor x = random_image({1, 12, 12}, rng);
  const auto f = forward(m, x, true);
  CHECK(f.prediction == 0.5);
  const Gradients g = backward(m, f.tape, 1);
  for (double v : g.input.data()) CHECK(v == 0.0);
}

TEST_CASE("forward is deterministic and accepts HxW inputs") {
  const Model m = small_conv_model(9);
  Rng rng(1);
  const Tensor x = random_image({1, 12, 12}, rng);
  CHECK(predict(m, x) == predict(m, x));
  CHECK(predict(m, x) == predict(m, x.reshaped({12, 12})));
  CHECK_THROWS_AS(predict(m, Tensor({12, 13})), ShapeError);
}

TEST_CASE("bce loss") {
  CHECK(bce_loss(0.5, 1) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(bce_loss(1.0, 1) <= 1e-11);
  CHECK(bce_loss(0.9, 0) == doctest::Approx(-std::log(0.1)).epsilon(1e-12));
  CHECK(std::isfinite(bce_loss(0.0, 1)));
  for (double p = 0.0; p <= 1.0; p += 0.01) {
    CHECK(bce_loss(p, 0) >= 0.0);
    CHECK(bce_loss(p, 1) >= 0.0);
  }
}

TEST_CASE("tape misuse") {
  Model m = small_conv_model(2);
  const Tensor x({1, 12, 12}, 0.3);
  CHECK_THROWS_AS(backward(m, ActivationTape{}, 0), StaleTapeError);
  const auto f = forward(m, x, true);
  m.mutable_params()[0].bias[0] += 0.1;
  CHECK_THROWS_AS(backward(m, f.tape, 0), StaleTapeError);
  CHECK_THROWS_AS(backward(m, forward(m, x, true).tape, 2), std::invalid_argument);
}

TEST_CASE("finite differences on a 12x12 model") {
  Model m = small_conv_model(17);
  Rng rng(23);
  const Tensor x = random_image({1, 12, 12}, rng);
  const int y = 1;
  const double h = 1e-5;
  const auto f = forward(m, x, true);
  const Gradients g = backward(m, f.tape, y);

  double worst = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    Tensor xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    const double num = (loss_at(m, xp, y) - loss_at(m, xm, y)) / (2 * h);
    worst = std::max(worst, rel_err(g.input[i], num));
  }
  const auto analytic = g.parameter_tensors();
  const auto n_tensors = analytic.size();
  for (std::size_t t = 0; t < n_tensors; ++t) {
    for (std::size_t i = 0; i < analytic[t]->numel(); ++i) {
      Model mp = m, mm = m;
      (*mp.parameter_tensors()[t])[i] += h;
      (*mm.parameter_tensors()[t])[i] -= h;
      const double num = (loss_at(mp, x, y) - loss_at(mm, x, y)) / (2 * h);
      worst = std::max(worst, rel_err((*analytic[t])[i], num));
    }
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("input_gradient agrees with backward") {
  const Model m = small_conv_model(4);
  Rng rng(8);
  const Tensor x = random_image({12, 12}, rng);
  const auto f = forward(m, x, true);
  const Gradients g = backward(m, f.tape, 0);
  const InputGradient ig = input_gradient(m, x, 0);
  CHECK(ig.gradient.shape() == Shape{12, 12});
  CHECK(ig.gradient.values() == g.input.values());
  CHECK(ig.loss == bce_loss(f.prediction, 0));

  const InputGradient lg = logit_input_gradient(m, x);
  CHECK(lg.gradient.values() == backward_logit(m, f.tape).input.values());
}

TEST_CASE("conv and pool kernels match nested loops exactly") {
  Rng rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    const kernels::ConvDims d{1 + rng.below(3), 5 + rng.below(20), 5 + rng.below(20),
                              1 + rng.below(4), 1 + rng.below(4)};
    std::vector<double> in(d.in_channels * d.height * d.width), w(d.out_channels * d.patch()),
        b(d.out_channels);
    for (double& v : in) v = rng.uniform(-1, 1);
    for (double& v : w) v = rng.uniform(-1, 1);
    for (double& v : b) v = rng.uniform(-1, 1);
    std::vector<double> out(d.out_channels * d.positions());
    kernels::conv2d_forward(d, in.data(), w.data(), b.data(), out.data());
    const std::size_t oh = d.out_height(), ow = d.out_width(), k = d.kernel;
    for (std::size_t o = 0; o < d.out_channels; ++o) {
      for (std::size_t i = 0; i < oh; ++i) {
        for (std::size_t j = 0; j < ow; ++j) {
          double acc = b[o];
          for (std::size_t c = 0; c < d.in_channels; ++c)
            for (std::size_t u = 0; u < k; ++u)
              for (std::size_t v = 0; v < k; ++v)
                acc += w[((o * d.in_channels + c) * k + u) * k + v] *
                       in[(c * d.height + i + u) * d.width + j + v];
          CHECK(out[(o * oh + i) * ow + j] == acc);
        }
      }
    }

    const kernels::PoolDims p{d.in_channels, d.height, d.width, 2, 2};
    std::vector<double> pooled(p.channels * p.out_height() * p.out_width());
    kernels::avg_pool_forward(p, in.data(), pooled.data());
    for (std::size_t c = 0; c < p.channels; ++c) {
      for (std::size_t i = 0; i < p.out_height(); ++i) {
        for (std::size_t j = 0; j < p.out_width(); ++j) {
          double s = 0.0;
          for (std::size_t u = 0; u < 2; ++u)
            for (std::size_t v = 0; v < 2; ++v) s += in[(c * d.height + 2 * i + u) * d.width + 2 * j + v];
          CHECK(pooled[(c * p.out_height() + i) * p.out_width() + j] == s * 0.25);
        }
      }
    }
  }
}

TEST_CASE("batch gradient is the mean of per-sample gradients and thread-independent") {
  const Model m = small_conv_model(12);
  Rng rng(44);
  std::vector<Tensor> xs;
  std::vector<int> ys;
  for (int i = 0; i < 21; ++i) {
    xs.push_back(random_image({1, 12, 12}, rng));
    ys.push_back(static_cast<int>(rng.below(2)));
  }
  std::vector<const Tensor*> ptrs;
  for (const auto& x : xs) ptrs.push_back(&x);

  const BatchGradient one = batch_gradient(m, ptrs, ys, 1);
  const BatchGradient three = batch_gradient(m, ptrs, ys, 3);
  for (std::size_t l = 0; l < one.params.size(); ++l) {
    CHECK(one.params[l].weight == three.params[l].weight);
    CHECK(one.params[l].bias == three.params[l].bias);
  }
  CHECK(one.mean_loss == three.mean_loss);

  double loss = 0.0;
  std::vector<double> mean(m.parameter_count(), 0.0);
  for (std::size_t s = 0; s < xs.size(); ++s) {
    const auto f = forward(m, xs[s], true);
    loss += bce_loss(f.prediction, ys[s]);
    std::size_t k = 0;
    const Gradients g = backward(m, f.tape, ys[s]);
    for (const Tensor* t : g.parameter_tensors())
      for (double v : t->data()) mean[k++] += v / static_cast<double>(xs.size());
  }
  CHECK(one.mean_loss == doctest::Approx(loss / xs.size()).epsilon(1e-12));
  std::size_t k = 0;
  for (const auto& p : one.params) {
    if (p.weight.empty()) continue;
    for (const Tensor* t : {&p.weight, &p.bias})
      for (double v : t->data()) CHECK(v == doctest::Approx(mean[k++]).epsilon(1e-10).scale(1e-12));
  }
}

TEST_CASE("adam three-step trace") {
  AdamState state(AdamConfig{0.1, 0.9, 0.999, 1e-8});
  Tensor theta = Tensor::vector({1.0});
  const Tensor g = Tensor::vector({2.0});
  Tensor* params[] = {&theta};
  const Tensor* grads[] = {&g};

  // With a constant gradient m_hat = 2 and v_hat = 4 at every step, so each
  // step moves theta by 0.1 * 2 / (2 + 1e-8).
  double m = 0, v = 0, th = 1;
  for (int t = 1; t <= 3; ++t) {
    adam_step(state, params, grads);
    m = 0.9 * m + (1 - 0.9) * 2;
    v = 0.999 * v + (1 - 0.999) * 2 * 2;
    const double m_hat = m / (1 - std::pow(0.9, t));
    const double v_hat = v / (1 - std::pow(0.999, t));
    th -= 0.1 * m_hat / (std::sqrt(v_hat) + 1e-8);
    CHECK(theta[0] == th);
    CHECK(state.step == static_cast<std::uint64_t>(t));
  }
  CHECK(theta[0] == doctest::Approx(0.7).epsilon(1e-8));

  AdamState zero_state;
  Tensor p2 = Tensor::vector({0.5, -0.25});
  const Tensor z = Tensor::zeros({2});
  Tensor* ps[] = {&p2};
  const Tensor* zs[] = {&z};
  adam_step(zero_state, ps, zs);
  CHECK(p2 == Tensor::vector({0.5, -0.25}));

  const Tensor wrong = Tensor::zeros({3});
  const Tensor* ws[] = {&wrong};
  CHECK_THROWS_AS(adam_step(zero_state, ps, ws), ShapeError);
}

TEST_CASE("training trajectories are reproducible") {
  auto run = [] {
    Model m = small_conv_model(77);
    AdamState state;
    Rng rng(3);
    std::vector<Tensor> xs;
    std::vector<int> ys;
    for (int i = 0; i < 16; ++i) {
      xs.push_back(random_image({1, 12, 12}, rng));
      ys.push_back(i % 2);
    }
    std::vector<const Tensor*> ptrs;
    for (const auto& x : xs) ptrs.push_back(&x);
    for (int step = 0; step < 5; ++step) {
      auto bg = batch_gradient(m, ptrs, ys, 1 + step % 2);
      adam_step(state, m, bg.params);
    }
    return serialize_model(m);
  };
  CHECK(run() == run());
}

TEST_CASE("model serialization round trip") {
  const Model m = build_paper_model(100, 100, 5);
  const std::string bytes = serialize_model(m);
  CHECK(bytes.substr(0, 4) == "RSNM");
  const Model back = deserialize_model(bytes);
  CHECK(serialize_model(back) == bytes);
  CHECK(back.layers() == m.layers());
  CHECK(back.seed() == 5);
  Rng rng(2);
  const Tensor x = random_image({100, 100}, rng);
  CHECK(predict(back, x) == predict(m, x));

  CHECK_THROWS_AS(deserialize_model("XXXX"), ModelFormatError);
  CHECK_THROWS_AS(deserialize_model(bytes.substr(0, bytes.size() - 1)), ModelFormatError);
  CHECK_THROWS_AS(deserialize_model(bytes + "x"), ModelFormatError);
}

TEST_CASE("kernel results do not depend on buffer alignment") {
  Rng rng(90);
  auto fill = [&](std::vector<double>& v) {
    for (double& x : v) x = rng.uniform(-1, 1);
  };
  for (std::size_t batch : {1, 3, 8}) {
    for (auto [fin, fout] : {std::pair<std::size_t, std::size_t>{84, 1}, {120, 84}, {300, 120}}) {
      std::vector<double> x(batch * fin), w(fout * fin), b(fout), g(batch * fout);
      fill(x);
      fill(w);
      fill(b);
      fill(g);
      std::vector<double> ref_y, ref_gw, ref_gb, ref_dx;
      for (std::size_t shift = 0; shift < 8; ++shift) {
        // Copy everything to buffers starting `shift` doubles in.
        std::vector<double> xb(shift + x.size()), wb(shift + w.size()), gbuf(shift + g.size());
        std::copy(x.begin(), x.end(), xb.begin() + shift);
        std::copy(w.begin(), w.end(), wb.begin() + shift);
        std::copy(g.begin(), g.end(), gbuf.begin() + shift);
        std::vector<double> y(shift + batch * fout), gw(shift + w.size(), 0.0),
            gb(shift + fout, 0.0), dx(shift + x.size());
        std::vector<const double*> in(batch), go(batch);
        std::vector<double*> out(batch), din(batch);
        for (std::size_t s = 0; s < batch; ++s) {
          in[s] = xb.data() + shift + s * fin;
          go[s] = gbuf.data() + shift + s * fout;
          out[s] = y.data() + shift + s * fout;
          din[s] = dx.data() + shift + s * fin;
        }
        kernels::dense_forward(fin, fout, batch, in.data(), wb.data() + shift, b.data(), out.data());
        kernels::dense_backward(fin, fout, batch, in.data(), wb.data() + shift, go.data(),
                                gw.data() + shift, gb.data() + shift, din.data());
        std::vector<double> cy(y.begin() + shift, y.end()), cgw(gw.begin() + shift, gw.end()),
            cgb(gb.begin() + shift, gb.end()), cdx(dx.begin() + shift, dx.end());
        if (shift == 0) {
          ref_y = cy, ref_gw = cgw, ref_gb = cgb, ref_dx = cdx;
        } else {
          CHECK(cy == ref_y);
          CHECK(cgw == ref_gw);
          CHECK(cgb == ref_gb);
          CHECK(cdx == ref_dx);
        }
      }
    }
  }

  const kernels::ConvDims d{6, 49, 49, 16, 3};
  std::vector<double> in(6 * 49 * 49), w(16 * d.patch()), g(16 * d.positions());
  fill(in);
  fill(w);
  fill(g);
  std::vector<double> ref_gw, ref_gb, ref_dx;
  for (std::size_t shift = 0; shift < 8; ++shift) {
    std::vector<double> ib(shift + in.size()), wb(shift + w.size()), gbuf(shift + g.size());
    std::copy(in.begin(), in.end(), ib.begin() + shift);
    std::copy(w.begin(), w.end(), wb.begin() + shift);
    std::copy(g.begin(), g.end(), gbuf.begin() + shift);
    std::vector<double> gw(shift + w.size(), 0.0), gb(shift + 16, 0.0), dx(shift + in.size());
    kernels::conv2d_backward(d, ib.data() + shift, wb.data() + shift, gbuf.data() + shift,
                             gw.data() + shift, gb.data() + shift, dx.data() + shift);
    std::vector<double> cgw(gw.begin() + shift, gw.end()), cgb(gb.begin() + shift, gb.end()),
        cdx(dx.begin() + shift, dx.end());
    if (shift == 0) {
      ref_gw = cgw, ref_gb = cgb, ref_dx = cdx;
    } else {
      CHECK(cgw == ref_gw);
      CHECK(cgb == ref_gb);
      CHECK(cdx == ref_dx);
    }
  }
}
