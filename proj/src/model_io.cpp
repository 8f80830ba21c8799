#include "sleepguard/model_io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace sleepguard {

namespace {

template <typename T>
void put(std::string& out, T value) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.append(reinterpret_cast<const char*>(bytes), sizeof(T));
}

void put_u32(std::string& out, std::size_t v) {
  if (v > UINT32_MAX) throw ModelFormatError("dimension too large for the model format");
  put<std::uint32_t>(out, static_cast<std::uint32_t>(v));
}

class Reader {
 public:
  Reader(const std::string& bytes, std::size_t start) : bytes_(bytes), pos_(start) {}

  template <typename T>
  T get() {
    if (pos_ + sizeof(T) > bytes_.size()) throw ModelFormatError("model file is truncated");
    unsigned char raw[sizeof(T)];
    std::memcpy(raw, bytes_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
    pos_ += sizeof(T);
    T value;
    std::memcpy(&value, raw, sizeof(T));
    return value;
  }

  std::size_t u32() { return get<std::uint32_t>(); }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::size_t pos_;
};

}  // namespace

std::string serialize_model(const Model& model) {
  std::string out = "RSNM";
  put<std::uint16_t>(out, kModelFormatVersion);
  put<std::uint64_t>(out, model.seed());
  put_u32(out, model.input_shape().size());
  for (auto d : model.input_shape()) put_u32(out, d);
  put_u32(out, model.layers().size());
  for (const auto& spec : model.layers()) {
    put<std::uint8_t>(out, static_cast<std::uint8_t>(spec.kind));
    switch (spec.kind) {
      case LayerKind::kConv2D:
        put_u32(out, spec.in_channels);
        put_u32(out, spec.out_channels);
        put_u32(out, spec.kernel);
        break;
      case LayerKind::kAvgPool2D:
        put_u32(out, spec.window);
        put_u32(out, spec.stride);
        break;
      case LayerKind::kFlatten:
        break;
      case LayerKind::kDense:
        put_u32(out, spec.in_features);
        put_u32(out, spec.out_features);
        break;
      case LayerKind::kActivation:
        put<std::uint8_t>(out, static_cast<std::uint8_t>(spec.activation));
        break;
    }
  }
  for (const auto& p : model.params()) {
    for (double v : p.weight.data()) put<double>(out, v);
    for (double v : p.bias.data()) put<double>(out, v);
  }
  return out;
}

Model deserialize_model(const std::string& bytes) {
  if (bytes.size() < 4 || bytes.compare(0, 4, "RSNM") != 0) {
    throw ModelFormatError("not a model file (bad magic)");
  }
  Reader in(bytes, 4);
  const auto version = in.get<std::uint16_t>();
  if (version != kModelFormatVersion) {
    throw ModelFormatError("unsupported model format version " + std::to_string(version));
  }
  const auto seed = in.get<std::uint64_t>();
  Shape input(in.u32());
  for (auto& d : input) d = in.u32();
  const std::size_t n_layers = in.u32();
  std::vector<LayerSpec> layers;
  layers.reserve(n_layers);
  for (std::size_t i = 0; i < n_layers; ++i) {
    const auto kind = static_cast<LayerKind>(in.get<std::uint8_t>());
    switch (kind) {
      case LayerKind::kConv2D: {
        const auto a = in.u32(), b = in.u32(), c = in.u32();
        layers.push_back(LayerSpec::conv2d(a, b, c));
        break;
      }
      case LayerKind::kAvgPool2D: {
        const auto a = in.u32(), b = in.u32();
        layers.push_back(LayerSpec::avg_pool2d(a, b));
        break;
      }
      case LayerKind::kFlatten:
        layers.push_back(LayerSpec::flatten());
        break;
      case LayerKind::kDense: {
        const auto a = in.u32(), b = in.u32();
        layers.push_back(LayerSpec::dense(a, b));
        break;
      }
      case LayerKind::kActivation: {
        const auto a = in.get<std::uint8_t>();
        if (a < 1 || a > 3) throw ModelFormatError("unknown activation code " + std::to_string(a));
        layers.push_back(LayerSpec::act(static_cast<Activation>(a)));
        break;
      }
      default:
        throw ModelFormatError("unknown layer kind code " + std::to_string(static_cast<int>(kind)));
    }
  }
  std::vector<LayerParams> params(layers.size());
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (!layers[l].has_params()) continue;
    std::vector<double> w(shape_numel(layers[l].weight_shape()));
    for (double& v : w) v = in.get<double>();
    std::vector<double> b(shape_numel(layers[l].bias_shape()));
    for (double& v : b) v = in.get<double>();
    params[l] = {Tensor(layers[l].weight_shape(), std::move(w)),
                 Tensor(layers[l].bias_shape(), std::move(b))};
  }
  if (!in.done()) throw ModelFormatError("trailing bytes after model parameters");
  try {
    return Model(std::move(input), std::move(layers), std::move(params), seed);
  } catch (const ShapeError& e) {
    throw ModelFormatError(std::string("inconsistent model structure: ") + e.what());
  }
}

void save_model(const Model& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  const auto bytes = serialize_model(model);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

Model load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open model file " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_model(bytes);
}

}  // namespace sleepguard
