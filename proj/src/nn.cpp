#include "sleepguard/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "sleepguard/kernels.hpp"
#include "sleepguard/parallel.hpp"
#include "sleepguard/rng.hpp"

namespace sleepguard {

std::string layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::kConv2D: return "Conv2D";
    case LayerKind::kAvgPool2D: return "AvgPool2D";
    case LayerKind::kFlatten: return "Flatten";
    case LayerKind::kDense: return "Dense";
    case LayerKind::kActivation: return "Activation";
  }
  return "?";
}

std::string activation_name(Activation act) {
  switch (act) {
    case Activation::kRelu: return "relu";
    case Activation::kSigmoid: return "sigmoid";
    case Activation::kTanh: return "tanh";
  }
  return "?";
}

Activation parse_activation(const std::string& name) {
  if (name == "relu") return Activation::kRelu;
  if (name == "sigmoid") return Activation::kSigmoid;
  if (name == "tanh") return Activation::kTanh;
  throw std::invalid_argument("unknown activation '" + name + "'");
}

LayerSpec LayerSpec::conv2d(std::size_t in_channels, std::size_t out_channels,
                            std::size_t kernel) {
  LayerSpec s;
  s.kind = LayerKind::kConv2D;
  s.in_channels = in_channels;
  s.out_channels = out_channels;
  s.kernel = kernel;
  return s;
}

LayerSpec LayerSpec::avg_pool2d(std::size_t window, std::size_t stride) {
  LayerSpec s;
  s.kind = LayerKind::kAvgPool2D;
  s.window = window;
  s.stride = stride;
  return s;
}

LayerSpec LayerSpec::flatten() { return LayerSpec{}; }

LayerSpec LayerSpec::dense(std::size_t in_features, std::size_t out_features) {
  LayerSpec s;
  s.kind = LayerKind::kDense;
  s.in_features = in_features;
  s.out_features = out_features;
  return s;
}

LayerSpec LayerSpec::act(Activation a) {
  LayerSpec s;
  s.kind = LayerKind::kActivation;
  s.activation = a;
  return s;
}

std::size_t LayerSpec::param_count() const {
  switch (kind) {
    case LayerKind::kConv2D: return (kernel * kernel * in_channels + 1) * out_channels;
    case LayerKind::kDense: return in_features * out_features + out_features;
    default: return 0;
  }
}

Shape LayerSpec::weight_shape() const {
  if (kind == LayerKind::kConv2D) return {out_channels, in_channels, kernel, kernel};
  if (kind == LayerKind::kDense) return {out_features, in_features};
  return {};
}

Shape LayerSpec::bias_shape() const {
  if (kind == LayerKind::kConv2D) return {out_channels};
  if (kind == LayerKind::kDense) return {out_features};
  return {};
}

Shape LayerSpec::output_shape(const Shape& in) const {
  auto fail = [&](const std::string& why) -> Shape {
    throw ShapeError(layer_kind_name(kind) + " cannot take input " + shape_str(in) + ": " + why);
  };
  switch (kind) {
    case LayerKind::kConv2D:
      if (in.size() != 3) return fail("expected (C,H,W)");
      if (in[0] != in_channels) return fail("expected " + std::to_string(in_channels) + " channels");
      if (kernel == 0 || out_channels == 0) return fail("empty kernel");
      if (in[1] < kernel || in[2] < kernel) return fail("kernel larger than input");
      return {out_channels, in[1] - kernel + 1, in[2] - kernel + 1};
    case LayerKind::kAvgPool2D:
      if (in.size() != 3) return fail("expected (C,H,W)");
      if (window == 0 || stride == 0) return fail("empty window");
      if (in[1] < window || in[2] < window) return fail("window larger than input");
      return {in[0], (in[1] - window) / stride + 1, (in[2] - window) / stride + 1};
    case LayerKind::kFlatten:
      return {shape_numel(in)};
    case LayerKind::kDense:
      if (in.size() != 1 || in[0] != in_features) {
        return fail("expected (" + std::to_string(in_features) + ")");
      }
      if (out_features == 0) return fail("zero outputs");
      return {out_features};
    case LayerKind::kActivation:
      return in;
  }
  return fail("unknown layer");
}

// ---------------------------------------------------------------------------

Model::Model(Shape input_shape, std::vector<LayerSpec> layers, std::uint64_t seed)
    : input_shape_(std::move(input_shape)), layers_(std::move(layers)), seed_(seed) {
  check_structure();
  Rng rng(seed);
  params_.resize(layers_.size());
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& spec = layers_[l];
    if (!spec.has_params()) continue;
    double fan_in, fan_out;
    if (spec.kind == LayerKind::kConv2D) {
      const double rf = static_cast<double>(spec.kernel * spec.kernel);
      fan_in = rf * static_cast<double>(spec.in_channels);
      fan_out = rf * static_cast<double>(spec.out_channels);
    } else {
      fan_in = static_cast<double>(spec.in_features);
      fan_out = static_cast<double>(spec.out_features);
    }
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    Tensor w(spec.weight_shape());
    for (double& v : w.mutable_data()) v = rng.uniform(-limit, limit);
    params_[l] = {std::move(w), Tensor(spec.bias_shape())};
  }
}

Model::Model(Shape input_shape, std::vector<LayerSpec> layers, std::vector<LayerParams> params,
             std::uint64_t seed)
    : input_shape_(std::move(input_shape)),
      layers_(std::move(layers)),
      params_(std::move(params)),
      seed_(seed) {
  check_structure();
  if (params_.size() != layers_.size()) throw ShapeError("one parameter slot per layer required");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& spec = layers_[l];
    if (spec.has_params()) {
      if (params_[l].weight.shape() != spec.weight_shape() ||
          params_[l].bias.shape() != spec.bias_shape()) {
        throw ShapeError("layer " + std::to_string(l) + " parameters have shapes " +
                         shape_str(params_[l].weight.shape()) + "/" +
                         shape_str(params_[l].bias.shape()) + ", expected " +
                         shape_str(spec.weight_shape()) + "/" + shape_str(spec.bias_shape()));
      }
    } else if (!params_[l].weight.empty() || !params_[l].bias.empty()) {
      throw ShapeError("layer " + std::to_string(l) + " takes no parameters");
    }
  }
}

void Model::check_structure() const {
  if (shape_numel(input_shape_) == 0) throw ShapeError("model input shape is empty");
  if (layers_.empty()) throw ShapeError("model has no layers");
  const auto& last = layers_.back();
  if (last.kind != LayerKind::kActivation || last.activation != Activation::kSigmoid) {
    throw ShapeError("model must end with a sigmoid activation");
  }
  Shape s = input_shape_;
  for (const auto& layer : layers_) s = layer.output_shape(s);
  if (shape_numel(s) != 1) throw ShapeError("model output must be a single value, got " + shape_str(s));
}

std::vector<Shape> Model::output_shapes() const {
  std::vector<Shape> out;
  Shape s = input_shape_;
  for (const auto& layer : layers_) {
    s = layer.output_shape(s);
    out.push_back(s);
  }
  return out;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& layer : layers_) n += layer.param_count();
  return n;
}

std::vector<Tensor*> Model::parameter_tensors() {
  std::vector<Tensor*> out;
  for (auto& p : mutable_params()) {
    if (p.weight.empty()) continue;
    out.push_back(&p.weight);
    out.push_back(&p.bias);
  }
  return out;
}

std::vector<const Tensor*> Model::parameter_tensors() const {
  std::vector<const Tensor*> out;
  for (const auto& p : params_) {
    if (p.weight.empty()) continue;
    out.push_back(&p.weight);
    out.push_back(&p.bias);
  }
  return out;
}

void Model::zero_parameters() {
  for (Tensor* t : parameter_tensors()) std::fill(t->mutable_data().begin(), t->mutable_data().end(), 0.0);
}

Model build_paper_model(std::size_t input_height, std::size_t input_width, std::uint64_t seed,
                        Activation hidden) {
  if (input_height != 100 || input_width != 100) {
    throw ShapeError("the reference architecture is defined for 100x100x1 inputs, got " +
                     std::to_string(input_height) + "x" + std::to_string(input_width));
  }
  std::vector<LayerSpec> layers = {
      LayerSpec::conv2d(1, 6, 3),      LayerSpec::act(hidden),
      LayerSpec::avg_pool2d(2, 2),     LayerSpec::conv2d(6, 16, 3),
      LayerSpec::act(hidden),          LayerSpec::avg_pool2d(2, 2),
      LayerSpec::flatten(),            LayerSpec::dense(23 * 23 * 16, 120),
      LayerSpec::act(hidden),          LayerSpec::dense(120, 84),
      LayerSpec::act(hidden),          LayerSpec::dense(84, 1),
      LayerSpec::act(Activation::kSigmoid),
  };
  return Model({1, input_height, input_width}, std::move(layers), seed);
}

// ---------------------------------------------------------------------------

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double bce_loss(double prediction, int label) {
  const double p = std::clamp(prediction, kBceEpsilon, 1.0 - kBceEpsilon);
  return label == 1 ? -std::log(p) : -std::log1p(-p);
}

double bce_logit_gradient(double logit, int label) {
  // sigmoid(z) - y, written so 1 - sigmoid(z) never cancels to zero.
  return label == 1 ? -sigmoid(-logit) : sigmoid(logit);
}

namespace {

void check_label(int label) {
  if (label != 0 && label != 1) throw std::invalid_argument("label must be 0 or 1");
}

void check_input(const Model& model, const Tensor& x) {
  const auto& want = model.input_shape();
  if (x.shape() == want) return;
  if (want.size() == 3 && want[0] == 1 && x.rank() == 2 && x.dim(0) == want[1] &&
      x.dim(1) == want[2]) {
    return;
  }
  throw ShapeError("model expects input " + shape_str(want) + ", got " + shape_str(x.shape()));
}

void apply_activation(Activation a, const std::vector<double>& in, std::vector<double>& out) {
  out.resize(in.size());
  switch (a) {
    case Activation::kRelu:
      for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
      break;
    case Activation::kSigmoid:
      for (std::size_t i = 0; i < in.size(); ++i) out[i] = sigmoid(in[i]);
      break;
    case Activation::kTanh:
      for (std::size_t i = 0; i < in.size(); ++i) out[i] = std::tanh(in[i]);
      break;
  }
}

// Runs every sample through the model layer by layer. tapes[s].inputs ends
// up holding each layer's input plus the final output.
void forward_batch(const Model& model, std::span<const Tensor* const> xs,
                   std::vector<ActivationTape>& tapes) {
  const auto& layers = model.layers();
  const auto& params = model.params();
  const auto shapes = model.output_shapes();
  const std::size_t n = xs.size();
  // Existing tape buffers are reused so repeated calls do not reallocate.
  tapes.resize(n);
  for (std::size_t s = 0; s < n; ++s) {
    check_input(model, *xs[s]);
    tapes[s].model = &model;
    tapes[s].generation = model.generation();
    tapes[s].inputs.resize(layers.size() + 1);
    tapes[s].inputs[0].assign(xs[s]->data().begin(), xs[s]->data().end());
  }
  std::vector<const double*> in_ptrs(n);
  std::vector<double*> out_ptrs(n);
  for (std::size_t li = 0; li < layers.size(); ++li) {
    const auto& spec = layers[li];
    const Shape& in_shape = li == 0 ? model.input_shape() : shapes[li - 1];
    const std::size_t out_size = shape_numel(shapes[li]);
    for (auto& tape : tapes) tape.inputs[li + 1].resize(out_size);
    for (std::size_t s = 0; s < n; ++s) {
      in_ptrs[s] = tapes[s].inputs[li].data();
      out_ptrs[s] = tapes[s].inputs[li + 1].data();
    }
    switch (spec.kind) {
      case LayerKind::kConv2D: {
        kernels::ConvDims d{in_shape[0], in_shape[1], in_shape[2], spec.out_channels,
                            spec.kernel};
        for (std::size_t s = 0; s < n; ++s) {
          kernels::conv2d_forward(d, in_ptrs[s], params[li].weight.data().data(),
                                  params[li].bias.data().data(), out_ptrs[s]);
        }
        break;
      }
      case LayerKind::kAvgPool2D: {
        kernels::PoolDims d{in_shape[0], in_shape[1], in_shape[2], spec.window, spec.stride};
        for (std::size_t s = 0; s < n; ++s) kernels::avg_pool_forward(d, in_ptrs[s], out_ptrs[s]);
        break;
      }
      case LayerKind::kFlatten:
        for (std::size_t s = 0; s < n; ++s) {
          std::copy(in_ptrs[s], in_ptrs[s] + out_size, out_ptrs[s]);
        }
        break;
      case LayerKind::kDense:
        kernels::dense_forward(spec.in_features, spec.out_features, n, in_ptrs.data(),
                               params[li].weight.data().data(), params[li].bias.data().data(),
                               out_ptrs.data());
        break;
      case LayerKind::kActivation:
        for (auto& tape : tapes) apply_activation(spec.activation, tape.inputs[li], tape.inputs[li + 1]);
        break;
    }
  }
  for (const auto& tape : tapes) {
    if (!std::isfinite(tape.inputs[layers.size() - 1][0])) {
      throw NonFiniteError("forward produced a non-finite logit");
    }
  }
}

double logit_of(const ActivationTape& tape) {
  // The final layer is a sigmoid, so its input is the logit.
  return tape.inputs[tape.inputs.size() - 2][0];
}

double prediction_of(const ActivationTape& tape) { return tape.inputs.back()[0]; }

void check_tape(const Model& model, const ActivationTape& tape) {
  if (!tape.recorded()) throw StaleTapeError("backward needs a tape recorded by forward");
  if (tape.model != &model || tape.generation != model.generation()) {
    throw StaleTapeError("tape was recorded against a different model state");
  }
  if (tape.inputs.size() != model.layers().size() + 1) {
    throw StaleTapeError("tape does not match the model's layer count");
  }
}

// Offset of each layer's weights in a flat parameter buffer; the bias
// follows the weights.
std::vector<std::size_t> flat_offsets(const Model& model) {
  std::vector<std::size_t> offsets(model.layers().size());
  std::size_t pos = 0;
  for (std::size_t l = 0; l < offsets.size(); ++l) {
    offsets[l] = pos;
    pos += model.layers()[l].param_count();
  }
  return offsets;
}

std::vector<LayerParams> unflatten(const Model& model, const std::vector<double>& flat) {
  std::vector<LayerParams> out(model.layers().size());
  std::size_t pos = 0;
  for (std::size_t l = 0; l < out.size(); ++l) {
    const auto& spec = model.layers()[l];
    if (!spec.has_params()) continue;
    const std::size_t nw = shape_numel(spec.weight_shape());
    const std::size_t nb = shape_numel(spec.bias_shape());
    const auto first = flat.begin() + static_cast<std::ptrdiff_t>(pos);
    out[l] = {Tensor(spec.weight_shape(), std::vector<double>(first, first + static_cast<std::ptrdiff_t>(nw))),
              Tensor(spec.bias_shape(), std::vector<double>(first + static_cast<std::ptrdiff_t>(nw),
                                                            first + static_cast<std::ptrdiff_t>(nw + nb)))};
    pos += nw + nb;
  }
  return out;
}

// Propagates d(objective)/d(logit) for each sample from the input of the final
// sigmoid back through every earlier layer. Parameter gradients are summed
// over the batch into `param_acc` (flat layout, see flat_offsets) when it is
// non-null; per-sample input gradients are written to `input_grads` when it
// is non-null.
void backprop_batch(const Model& model, std::span<const ActivationTape> tapes,
                    std::span<const double> d_logits, double* param_acc,
                    std::vector<std::vector<double>>* input_grads) {
  const auto offsets = flat_offsets(model);
  const auto& layers = model.layers();
  const auto& params = model.params();
  const auto shapes = model.output_shapes();
  const std::size_t n = tapes.size();
  thread_local std::vector<std::vector<double>> grad, next;
  grad.resize(n);
  next.resize(n);
  for (std::size_t s = 0; s < n; ++s) grad[s].assign(1, d_logits[s]);
  std::vector<const double*> in_ptrs(n), g_ptrs(n);
  std::vector<double*> next_ptrs(n);

  for (std::size_t li = layers.size() - 1; li-- > 0;) {
    const auto& spec = layers[li];
    const Shape& in_shape = li == 0 ? model.input_shape() : shapes[li - 1];
    const std::size_t in_size = shape_numel(in_shape);
    const bool need_input = li > 0 || input_grads != nullptr;
    if (!need_input && !spec.has_params()) break;
    for (std::size_t s = 0; s < n; ++s) {
      if (need_input) next[s].resize(in_size);
      in_ptrs[s] = tapes[s].inputs[li].data();
      g_ptrs[s] = grad[s].data();
      next_ptrs[s] = need_input ? next[s].data() : nullptr;
    }
    double* gw = nullptr;
    double* gb = nullptr;
    if (param_acc && spec.has_params()) {
      gw = param_acc + offsets[li];
      gb = gw + shape_numel(spec.weight_shape());
    }
    switch (spec.kind) {
      case LayerKind::kConv2D: {
        kernels::ConvDims d{in_shape[0], in_shape[1], in_shape[2], spec.out_channels,
                            spec.kernel};
        for (std::size_t s = 0; s < n; ++s) {
          kernels::conv2d_backward(d, in_ptrs[s], params[li].weight.data().data(), g_ptrs[s], gw,
                                   gb, next_ptrs[s]);
        }
        break;
      }
      case LayerKind::kAvgPool2D: {
        kernels::PoolDims d{in_shape[0], in_shape[1], in_shape[2], spec.window, spec.stride};
        for (std::size_t s = 0; s < n; ++s) kernels::avg_pool_backward(d, g_ptrs[s], next_ptrs[s]);
        break;
      }
      case LayerKind::kFlatten:
        for (std::size_t s = 0; s < n; ++s) next[s] = grad[s];
        break;
      case LayerKind::kDense:
        kernels::dense_backward(spec.in_features, spec.out_features, n, in_ptrs.data(),
                                params[li].weight.data().data(), g_ptrs.data(), gw, gb,
                                need_input ? next_ptrs.data() : nullptr);
        break;
      case LayerKind::kActivation:
        for (std::size_t s = 0; s < n; ++s) {
          const auto& in = tapes[s].inputs[li];
          const auto& out = tapes[s].inputs[li + 1];
          const auto& g = grad[s];
          auto& dx = next[s];
          switch (spec.activation) {
            case Activation::kRelu:
              for (std::size_t i = 0; i < in_size; ++i) dx[i] = in[i] > 0.0 ? g[i] : 0.0;
              break;
            case Activation::kSigmoid:
              for (std::size_t i = 0; i < in_size; ++i) dx[i] = g[i] * out[i] * (1.0 - out[i]);
              break;
            case Activation::kTanh:
              for (std::size_t i = 0; i < in_size; ++i) dx[i] = g[i] * (1.0 - out[i] * out[i]);
              break;
          }
        }
        break;
    }
    if (!need_input) break;
    grad.swap(next);
  }
  if (input_grads) {
    input_grads->resize(n);
    for (std::size_t s = 0; s < n; ++s) (*input_grads)[s] = grad[s];
  }
}

Gradients full_gradients(const Model& model, const ActivationTape& tape, double d_logit) {
  check_tape(model, tape);
  Gradients g;
  std::vector<double> flat(model.parameter_count(), 0.0);
  std::vector<std::vector<double>> input;
  backprop_batch(model, std::span(&tape, 1), std::span(&d_logit, 1), flat.data(), &input);
  g.params = unflatten(model, flat);
  g.input = Tensor(model.input_shape(), std::move(input[0]));
  return g;
}

}  // namespace

ForwardResult forward(const Model& model, const Tensor& x, bool record_tape) {
  const Tensor* ptr = &x;
  std::vector<ActivationTape> tapes;
  forward_batch(model, std::span(&ptr, 1), tapes);
  ForwardResult result;
  result.logit = logit_of(tapes[0]);
  result.prediction = prediction_of(tapes[0]);
  if (record_tape) result.tape = std::move(tapes[0]);
  return result;
}

double predict(const Model& model, const Tensor& x) { return forward(model, x, false).prediction; }

std::vector<double> predict_batch(const Model& model, std::span<const Tensor* const> xs) {
  constexpr std::size_t kChunk = 8;
  std::vector<double> out;
  out.reserve(xs.size());
  thread_local std::vector<ActivationTape> tapes;
  for (std::size_t start = 0; start < xs.size(); start += kChunk) {
    const auto chunk = xs.subspan(start, std::min(kChunk, xs.size() - start));
    forward_batch(model, chunk, tapes);
    for (const auto& t : tapes) out.push_back(prediction_of(t));
  }
  return out;
}

std::vector<Tensor*> Gradients::parameter_tensors() {
  std::vector<Tensor*> out;
  for (auto& p : params) {
    if (p.weight.empty()) continue;
    out.push_back(&p.weight);
    out.push_back(&p.bias);
  }
  return out;
}

std::vector<const Tensor*> Gradients::parameter_tensors() const {
  std::vector<const Tensor*> out;
  for (const auto& p : params) {
    if (p.weight.empty()) continue;
    out.push_back(&p.weight);
    out.push_back(&p.bias);
  }
  return out;
}

Gradients backward(const Model& model, const ActivationTape& tape, int label) {
  check_label(label);
  check_tape(model, tape);
  return full_gradients(model, tape, bce_logit_gradient(logit_of(tape), label));
}

Gradients backward_logit(const Model& model, const ActivationTape& tape) {
  return full_gradients(model, tape, 1.0);
}

InputGradient input_gradient(const Model& model, const Tensor& x, int label) {
  check_label(label);
  const Tensor* ptr = &x;
  thread_local std::vector<ActivationTape> tapes;
  forward_batch(model, std::span(&ptr, 1), tapes);
  InputGradient out;
  out.logit = logit_of(tapes[0]);
  out.prediction = prediction_of(tapes[0]);
  out.loss = bce_loss(out.prediction, label);
  const double d_logit = bce_logit_gradient(out.logit, label);
  std::vector<std::vector<double>> input;
  backprop_batch(model, tapes, std::span(&d_logit, 1), nullptr, &input);
  out.gradient = Tensor(x.shape(), std::move(input[0]));
  return out;
}

InputGradient logit_input_gradient(const Model& model, const Tensor& x) {
  const Tensor* ptr = &x;
  thread_local std::vector<ActivationTape> tapes;
  forward_batch(model, std::span(&ptr, 1), tapes);
  InputGradient out;
  out.logit = logit_of(tapes[0]);
  out.prediction = prediction_of(tapes[0]);
  const double one = 1.0;
  std::vector<std::vector<double>> input;
  backprop_batch(model, tapes, std::span(&one, 1), nullptr, &input);
  out.gradient = Tensor(x.shape(), std::move(input[0]));
  return out;
}

BatchGradient batch_gradient(const Model& model, std::span<const Tensor* const> inputs,
                             std::span<const int> labels, int threads) {
  if (inputs.size() != labels.size()) throw std::invalid_argument("inputs/labels size mismatch");
  if (inputs.empty()) throw std::invalid_argument("empty batch");
  for (int y : labels) check_label(y);
  const std::size_t n = inputs.size();
  const std::size_t chunks = (n + kGradientChunk - 1) / kGradientChunk;
  const std::size_t n_params = model.parameter_count();
  const std::size_t slots = std::min<std::size_t>(chunks, threads > 1 ? threads : 1);

  // Chunks run in waves of `slots`; partial sums are folded into the total
  // strictly in chunk order.
  thread_local std::vector<std::vector<double>> partial_buffers;
  auto& partial = partial_buffers;
  if (partial.size() < slots) partial.resize(slots);
  std::vector<double> total(n_params, 0.0);
  std::vector<double> loss(chunks, 0.0);
  std::vector<std::size_t> correct(chunks, 0);

  auto run_chunk = [&](std::size_t c, std::vector<double>& acc) {
    acc.assign(n_params, 0.0);
    const std::size_t start = c * kGradientChunk;
    const std::size_t count = std::min(kGradientChunk, n - start);
    thread_local std::vector<ActivationTape> tapes;
    forward_batch(model, inputs.subspan(start, count), tapes);
    std::vector<double> d_logits(count);
    for (std::size_t s = 0; s < count; ++s) {
      const int y = labels[start + s];
      const double p = prediction_of(tapes[s]);
      loss[c] += bce_loss(p, y);
      correct[c] += static_cast<std::size_t>((p >= 0.5 ? 1 : 0) == y);
      d_logits[s] = bce_logit_gradient(logit_of(tapes[s]), y);
    }
    backprop_batch(model, tapes, d_logits, acc.data(), nullptr);
  };

  for (std::size_t wave = 0; wave < chunks; wave += slots) {
    const std::size_t in_wave = std::min(slots, chunks - wave);
    parallel_for(in_wave, threads, [&](std::size_t k) { run_chunk(wave + k, partial[k]); });
    for (std::size_t k = 0; k < in_wave; ++k) {
      const double* src = partial[k].data();
      for (std::size_t i = 0; i < n_params; ++i) total[i] += src[i];
    }
  }

  BatchGradient out;
  const double inv = 1.0 / static_cast<double>(n);
  for (double& v : total) {
    v *= inv;
    if (!std::isfinite(v)) throw NonFiniteError("non-finite parameter gradient");
  }
  for (std::size_t c = 0; c < chunks; ++c) {
    out.mean_loss += loss[c];
    out.correct += correct[c];
  }
  out.mean_loss *= inv;
  out.params = unflatten(model, total);
  return out;
}

// ---------------------------------------------------------------------------

void adam_step(AdamState& state, std::span<Tensor* const> params,
               std::span<const Tensor* const> grads) {
  if (params.size() != grads.size()) {
    throw ShapeError("adam: " + std::to_string(params.size()) + " parameters but " +
                     std::to_string(grads.size()) + " gradients");
  }
  if (state.first_moment.empty()) {
    for (const Tensor* p : params) {
      state.first_moment.emplace_back(p->shape());
      state.second_moment.emplace_back(p->shape());
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw ShapeError("adam: state tracks a different number of parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i]->shape() ||
        params[i]->shape() != state.first_moment[i].shape()) {
      throw ShapeError("adam: parameter " + std::to_string(i) + " has shape " +
                       shape_str(params[i]->shape()) + " but gradient " +
                       shape_str(grads[i]->shape()));
    }
  }
  const auto& cfg = state.config;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  const double b1 = cfg.beta1, b2 = cfg.beta2, lr = cfg.lr, eps = cfg.eps;
  for (std::size_t i = 0; i < params.size(); ++i) {
    double* __restrict p = params[i]->mutable_data().data();
    const double* __restrict g = grads[i]->data().data();
    double* __restrict m = state.first_moment[i].mutable_data().data();
    double* __restrict v = state.second_moment[i].mutable_data().data();
    const std::size_t n = params[i]->numel();
    for (std::size_t k = 0; k < n; ++k) {
      m[k] = b1 * m[k] + (1.0 - b1) * g[k];
      v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
      const double m_hat = m[k] / bc1;
      const double v_hat = v[k] / bc2;
      p[k] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
    params[i]->validate();
  }
}

void adam_step(AdamState& state, Model& model, std::vector<LayerParams>& grads) {
  std::vector<const Tensor*> g;
  for (const auto& p : grads) {
    if (p.weight.empty()) continue;
    g.push_back(&p.weight);
    g.push_back(&p.bias);
  }
  const auto params = model.parameter_tensors();
  adam_step(state, params, g);
}

}  // namespace sleepguard
