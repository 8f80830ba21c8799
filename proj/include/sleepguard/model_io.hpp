#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "sleepguard/nn.hpp"

namespace sleepguard {

// Binary model file, all integers and floats little-endian:
//
//   "RSNM"            4 bytes magic
//   u16               format version (1)
//   u64               initialization seed
//   u32               input rank, then u32 per input dimension
//   u32               layer count
//   per layer:        u8 kind, then
//                       Conv2D:     u32 in_channels, u32 out_channels, u32 kernel
//                       AvgPool2D:  u32 window, u32 stride
//                       Flatten:    nothing
//                       Dense:      u32 in_features, u32 out_features
//                       Activation: u8 activation
//   per layer with parameters, in declaration order:
//                     f64[weight count] then f64[bias count]
inline constexpr std::uint16_t kModelFormatVersion = 1;

class ModelFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string serialize_model(const Model& model);
Model deserialize_model(const std::string& bytes);

void save_model(const Model& model, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

}  // namespace sleepguard
