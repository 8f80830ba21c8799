#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sleepguard/tensor.hpp"

namespace sleepguard {

enum class LayerKind : std::uint8_t {
  kConv2D = 1,
  kAvgPool2D = 2,
  kFlatten = 3,
  kDense = 4,
  kActivation = 5,
};

enum class Activation : std::uint8_t { kRelu = 1, kSigmoid = 2, kTanh = 3 };

std::string layer_kind_name(LayerKind kind);
std::string activation_name(Activation act);
Activation parse_activation(const std::string& name);

struct LayerSpec {
  LayerKind kind = LayerKind::kFlatten;
  // Conv2D: valid padding, stride 1, cross-correlation.
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 0;
  // AvgPool2D: floor division on odd sizes.
  std::size_t window = 0;
  std::size_t stride = 0;
  // Dense
  std::size_t in_features = 0;
  std::size_t out_features = 0;
  Activation activation = Activation::kRelu;

  static LayerSpec conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel);
  static LayerSpec avg_pool2d(std::size_t window = 2, std::size_t stride = 2);
  static LayerSpec flatten();
  static LayerSpec dense(std::size_t in_features, std::size_t out_features);
  static LayerSpec act(Activation a);

  bool has_params() const { return kind == LayerKind::kConv2D || kind == LayerKind::kDense; }
  std::size_t param_count() const;
  Shape weight_shape() const;
  Shape bias_shape() const;

  /// Output shape for a given input shape; throws ShapeError if incompatible.
  Shape output_shape(const Shape& input) const;

  bool operator==(const LayerSpec&) const = default;
};

/// Weight and bias of one layer. Both are empty for parameter-free layers.
struct LayerParams {
  Tensor weight;
  Tensor bias;
};

/// A sequential binary classifier whose last layer is a sigmoid.
///
/// The pre-sigmoid value is the model's logit; prediction = sigmoid(logit).
class Model {
 public:
  /// Validates the shape chain and initializes weights with seeded
  /// Glorot-uniform scaling (biases zero).
  Model(Shape input_shape, std::vector<LayerSpec> layers, std::uint64_t seed);

  /// Builds a model from explicit parameters (used by deserialization).
  Model(Shape input_shape, std::vector<LayerSpec> layers, std::vector<LayerParams> params,
        std::uint64_t seed);

  const Shape& input_shape() const noexcept { return input_shape_; }
  const std::vector<LayerSpec>& layers() const noexcept { return layers_; }
  const std::vector<LayerParams>& params() const noexcept { return params_; }
  std::uint64_t seed() const noexcept { return seed_; }

  /// Mutable access bumps the generation, invalidating outstanding tapes.
  std::vector<LayerParams>& mutable_params() noexcept {
    ++generation_;
    return params_;
  }
  std::uint64_t generation() const noexcept { return generation_; }

  /// Output shape after each layer, in declaration order.
  std::vector<Shape> output_shapes() const;
  std::size_t parameter_count() const;

  /// Flat view of every parameter tensor (weight then bias per layer).
  std::vector<Tensor*> parameter_tensors();
  std::vector<const Tensor*> parameter_tensors() const;

  /// Every weight and bias set to zero.
  void zero_parameters();

 private:
  void check_structure() const;

  Shape input_shape_;
  std::vector<LayerSpec> layers_;
  std::vector<LayerParams> params_;
  std::uint64_t seed_ = 0;
  std::uint64_t generation_ = 0;
};

/// The two-conv / three-dense classifier for 100x100 grayscale inputs.
///
/// Hidden activation is ReLU by default; tanh is available for
/// sensitivity studies.
Model build_paper_model(std::size_t input_height, std::size_t input_width,
                        std::uint64_t seed = 0, Activation hidden = Activation::kRelu);

/// Intermediates recorded by forward for use by backward.
struct ActivationTape {
  const Model* model = nullptr;
  std::uint64_t generation = 0;
  /// inputs[i] is the input to layer i; inputs.back() is the final output.
  std::vector<std::vector<double>> inputs;
  bool recorded() const { return model != nullptr; }
};

struct ForwardResult {
  double prediction = 0.0;
  double logit = 0.0;
  ActivationTape tape;
};

/// Accepts x with the model's input shape, or (H, W) when the model expects
/// a single channel (1, H, W).
ForwardResult forward(const Model& model, const Tensor& x, bool record_tape = false);
double predict(const Model& model, const Tensor& x);
std::vector<double> predict_batch(const Model& model, std::span<const Tensor* const> xs);

struct Gradients {
  std::vector<LayerParams> params;
  Tensor input;

  std::vector<Tensor*> parameter_tensors();
  std::vector<const Tensor*> parameter_tensors() const;
};

/// Raised when backward is given a tape that is missing or was recorded
/// against a different model state.
class StaleTapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Gradient of the binary cross-entropy loss w.r.t. every parameter and the
/// input. label must be 0 or 1.
Gradients backward(const Model& model, const ActivationTape& tape, int label);

/// Gradient of the logit w.r.t. every parameter and the input.
Gradients backward_logit(const Model& model, const ActivationTape& tape);

struct InputGradient {
  Tensor gradient;  // shaped like the input that was passed in
  double logit = 0.0;
  double prediction = 0.0;
  double loss = 0.0;  // BCE for input_gradient; unset for logit_input_gradient
};

/// Gradient of the BCE loss w.r.t. the input only (skips parameter gradients).
InputGradient input_gradient(const Model& model, const Tensor& x, int label);

/// Gradient of the logit w.r.t. the input only.
InputGradient logit_input_gradient(const Model& model, const Tensor& x);

/// d(loss)/d(logit) for sigmoid + BCE, computed without cancellation.
double bce_logit_gradient(double logit, int label);

double sigmoid(double z);

/// -[y ln p + (1 - y) ln(1 - p)] with p clamped to [1e-12, 1 - 1e-12].
double bce_loss(double prediction, int label);
inline constexpr double kBceEpsilon = 1e-12;

/// Mean loss and mean parameter gradient over a batch.
struct BatchGradient {
  std::vector<LayerParams> params;
  double mean_loss = 0.0;
  std::size_t correct = 0;
};

/// Samples per gradient work unit.
inline constexpr std::size_t kGradientChunk = 8;

/// Per-sample work is split into fixed chunks and reduced in chunk order, so
/// the result is bitwise independent of the thread count.
BatchGradient batch_gradient(const Model& model, std::span<const Tensor* const> inputs,
                             std::span<const int> labels, int threads = 1);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;

  explicit AdamState(AdamConfig cfg = {}) : config(cfg) {}
};

/// One bias-corrected Adam update. Moments are lazily shaped on first use.
void adam_step(AdamState& state, std::span<Tensor* const> params,
               std::span<const Tensor* const> grads);
void adam_step(AdamState& state, Model& model, std::vector<LayerParams>& grads);

}  // namespace sleepguard
