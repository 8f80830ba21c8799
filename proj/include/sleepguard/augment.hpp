#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "sleepguard/dataset.hpp"
#include "sleepguard/rng.hpp"
#include "sleepguard/tensor.hpp"

namespace sleepguard {

/// Ranges for random affine augmentation. Each range is symmetric about the
/// identity: rotation in degrees, shifts as fractions of the image size,
/// shear as a factor, zoom as scale in [1 - zoom, 1 + zoom].
struct AugmentConfig {
  double rotation_range = 40.0;
  double width_shift = 0.2;
  double height_shift = 0.2;
  double shear_range = 0.2;
  double zoom_range = 0.2;
  bool horizontal_flip = true;
  double rescale = 1.0 / 255.0;  // applied by the loader, not by random_augment
  std::uint64_t seed = 0;

  /// Every range zero and no flip.
  static AugmentConfig identity();
  void validate() const;
};

/// One concrete draw.
struct AugmentParams {
  double rotation_deg = 0.0;
  double shift_x = 0.0;  // pixels, positive moves content right
  double shift_y = 0.0;  // pixels, positive moves content down
  double shear = 0.0;
  double zoom = 1.0;
  bool flip = false;
};

/// Draws rotation, shear, zoom, shift x, shift y, then flip, in that order.
AugmentParams sample_augment(const AugmentConfig& config, std::size_t height, std::size_t width, Rng& rng);

/// Applies rotate -> shear -> zoom -> shift about the image center, then the
/// horizontal flip. Resampling inverse-maps each output pixel and reads the
/// input bilinearly, replicating the nearest edge outside the image.
Tensor apply_augment(const Tensor& image, const AugmentParams& params);

Tensor random_augment(const Tensor& image, const AugmentConfig& config, Rng& rng);

/// Per-sample stream so augmentation is independent of processing order.
Rng augment_stream(const AugmentConfig& config, std::uint64_t epoch, std::uint64_t index);

/// Raw 8-bit values to [0, 1]. Values outside [0, 255] are rejected.
Tensor rescale(const Tensor& raw, double factor = 1.0 / 255.0);

/// Writes `copies` augmented versions of every record under root in the
/// standard class-folder layout, plus root/augment_manifest.csv listing the
/// sampled parameters of each written image.
Dataset materialize_augmented(const Dataset& data, const AugmentConfig& config, std::size_t copies,
                              const std::filesystem::path& root);

}  // namespace sleepguard
