#include "sleepguard/augment.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "sleepguard/image.hpp"

namespace sleepguard {

AugmentConfig AugmentConfig::identity() {
  AugmentConfig c;
  c.rotation_range = c.width_shift = c.height_shift = c.shear_range = c.zoom_range = 0.0;
  c.horizontal_flip = false;
  return c;
}

void AugmentConfig::validate() const {
  for (double r : {rotation_range, width_shift, height_shift, shear_range, zoom_range}) {
    if (!(r >= 0.0) || !std::isfinite(r)) throw std::invalid_argument("augmentation ranges must be finite and >= 0");
  }
  if (zoom_range >= 1.0) throw std::invalid_argument("zoom range must be below 1");
  if (!(rescale > 0.0)) throw std::invalid_argument("rescale must be positive");
}

AugmentParams sample_augment(const AugmentConfig& c, std::size_t height, std::size_t width, Rng& rng) {
  // A zero range still consumes its draw so the stream position of later
  // parameters does not depend on which ranges are enabled.
  AugmentParams p;
  p.rotation_deg = rng.uniform(-c.rotation_range, c.rotation_range);
  p.shear = rng.uniform(-c.shear_range, c.shear_range);
  p.zoom = rng.uniform(1.0 - c.zoom_range, 1.0 + c.zoom_range);
  p.shift_x = rng.uniform(-c.width_shift, c.width_shift) * static_cast<double>(width);
  p.shift_y = rng.uniform(-c.height_shift, c.height_shift) * static_cast<double>(height);
  const bool flip = rng.bernoulli(0.5);
  p.flip = c.horizontal_flip && flip;
  return p;
}

namespace {

// Coordinates this close to an integer are treated as exact, so quarter
// turns and identity maps reproduce pixels bitwise despite sin/cos rounding.
double snap(double v) {
  const double r = std::round(v);
  return std::abs(v - r) < 1e-9 ? r : v;
}

}  // namespace

Tensor apply_augment(const Tensor& image, const AugmentParams& p) {
  if (image.rank() != 2) throw ShapeError("augmentation expects an (H,W) image, got " + shape_str(image.shape()));
  const std::size_t h = image.dim(0), w = image.dim(1);
  const double cy = 0.5 * static_cast<double>(h - 1);
  const double cx = 0.5 * static_cast<double>(w - 1);

  // Forward map on centered coordinates: v = Z * S * R * u + t.
  const double th = p.rotation_deg * std::numbers::pi / 180.0;
  const double c = std::cos(th), s = std::sin(th);
  // R = [c -s; s c], S = [1 k; 0 1], Z = z I.
  const double a11 = p.zoom * (c + p.shear * s);
  const double a12 = p.zoom * (-s + p.shear * c);
  const double a21 = p.zoom * s;
  const double a22 = p.zoom * c;
  const double det = a11 * a22 - a12 * a21;
  if (std::abs(det) < 1e-12) throw std::invalid_argument("augmentation transform is singular");
  // Inverse of the linear part.
  const double i11 = a22 / det, i12 = -a12 / det, i21 = -a21 / det, i22 = a11 / det;

  Tensor out({h, w});
  auto dst = out.mutable_data();
  const double* src = image.data().data();
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      const std::size_t oj = p.flip ? w - 1 - j : j;
      const double vx = static_cast<double>(oj) - cx - p.shift_x;
      const double vy = static_cast<double>(i) - cy - p.shift_y;
      const double ux = snap(i11 * vx + i12 * vy + cx);
      const double uy = snap(i21 * vx + i22 * vy + cy);
      dst[i * w + j] = sample_bilinear(src, h, w, uy, ux);
    }
  }
  return out;
}

Tensor random_augment(const Tensor& image, const AugmentConfig& config, Rng& rng) {
  if (image.empty()) throw ShapeError("cannot augment an empty image");
  if (image.rank() != 2) throw ShapeError("augmentation expects an (H,W) image, got " + shape_str(image.shape()));
  return apply_augment(image, sample_augment(config, image.dim(0), image.dim(1), rng));
}

Rng augment_stream(const AugmentConfig& config, std::uint64_t epoch, std::uint64_t index) {
  return Rng::stream(derive_seed(config.seed, epoch), index);
}

Tensor rescale(const Tensor& raw, double factor) {
  for (double v : raw.data()) {
    if (!(v >= 0.0 && v <= 255.0)) throw std::invalid_argument("raw pixel value outside [0,255]");
  }
  return scale(raw, factor);
}

Dataset materialize_augmented(const Dataset& data, const AugmentConfig& config, std::size_t copies,
                              const std::filesystem::path& root) {
  config.validate();
  std::filesystem::create_directories(root);
  std::ofstream manifest(root / "augment_manifest.csv");
  if (!manifest) throw DataError("cannot write " + (root / "augment_manifest.csv").string());
  manifest << "id,source,label,copy,rotation_deg,shift_x,shift_y,shear,zoom,flip\n";
  Dataset out;
  out.split = data.split;
  out.provenance = data.provenance + " augmented seed=" + std::to_string(config.seed) +
                   " copies=" + std::to_string(copies);
  char buf[256];
  for (std::size_t k = 0; k < copies; ++k) {
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto& r = data.records[i];
      Rng rng = augment_stream(config, k, i);
      const AugmentParams p = sample_augment(config, r.pixels.dim(0), r.pixels.dim(1), rng);
      std::filesystem::path id(r.id);
      id.replace_extension();
      const std::string new_id = id.string() + "_aug" + std::to_string(k) + ".png";
      ImageRecord rec{new_id, apply_augment(r.pixels, p), r.label};
      write_png(root / new_id, rec.pixels);
      std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g,%d", p.rotation_deg, p.shift_x, p.shift_y,
                    p.shear, p.zoom, p.flip ? 1 : 0);
      manifest << new_id << ',' << r.id << ',' << label_name(r.label) << ',' << k << ',' << buf << '\n';
      out.records.push_back(std::move(rec));
    }
  }
  std::filesystem::create_directories(root / "open");
  std::filesystem::create_directories(root / "closed");
  return out;
}

}  // namespace sleepguard
