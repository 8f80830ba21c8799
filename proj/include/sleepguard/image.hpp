#pragma once

// Grayscale image helpers shared by the dataset and augmentation code.
// Images are (H, W) tensors with values in [0, 1].

#include <cstddef>
#include <filesystem>
#include <stdexcept>

#include "sleepguard/tensor.hpp"

namespace sleepguard {

/// Raised for missing, undecodable or inconsistent input data.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bilinear sample at (y, x) with out-of-range coordinates clamped to the
/// nearest edge pixel.
double sample_bilinear(const double* img, std::size_t height, std::size_t width, double y, double x);

/// Bilinear resize with half-pixel centers. Same-size resize is a copy.
Tensor resize_bilinear(const Tensor& image, std::size_t height, std::size_t width);

/// Decodes an 8-bit grayscale or color image into raw luminance values in
/// [0, 255]. Color pixels use (299 R + 587 G + 114 B) / 1000, so a gray pixel
/// keeps its value exactly.
Tensor read_luminance(const std::filesystem::path& path);

/// Writes an (H, W) image in [0, 1] as an 8-bit grayscale PNG (rounded).
void write_png(const std::filesystem::path& path, const Tensor& image);

}  // namespace sleepguard
