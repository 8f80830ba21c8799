#include "sleepguard/image.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

namespace sleepguard {

double sample_bilinear(const double* img, std::size_t height, std::size_t width, double y, double x) {
  y = std::clamp(y, 0.0, static_cast<double>(height - 1));
  x = std::clamp(x, 0.0, static_cast<double>(width - 1));
  const auto y0 = static_cast<std::size_t>(y);
  const auto x0 = static_cast<std::size_t>(x);
  const std::size_t y1 = std::min(y0 + 1, height - 1);
  const std::size_t x1 = std::min(x0 + 1, width - 1);
  const double fy = y - static_cast<double>(y0);
  const double fx = x - static_cast<double>(x0);
  // Integer coordinates reproduce the stored pixel exactly.
  if (fy == 0.0 && fx == 0.0) return img[y0 * width + x0];
  const double top = img[y0 * width + x0] * (1.0 - fx) + img[y0 * width + x1] * fx;
  const double bottom = img[y1 * width + x0] * (1.0 - fx) + img[y1 * width + x1] * fx;
  return top * (1.0 - fy) + bottom * fy;
}

Tensor resize_bilinear(const Tensor& image, std::size_t height, std::size_t width) {
  if (image.rank() != 2) throw ShapeError("resize expects an (H,W) image, got " + shape_str(image.shape()));
  const std::size_t h = image.dim(0), w = image.dim(1);
  if (h == height && w == width) return image;
  const double sy = static_cast<double>(h) / static_cast<double>(height);
  const double sx = static_cast<double>(w) / static_cast<double>(width);
  Tensor out({height, width});
  auto dst = out.mutable_data();
  const double* src = image.data().data();
  for (std::size_t i = 0; i < height; ++i) {
    const double y = (static_cast<double>(i) + 0.5) * sy - 0.5;
    for (std::size_t j = 0; j < width; ++j) {
      const double x = (static_cast<double>(j) + 0.5) * sx - 0.5;
      dst[i * width + j] = sample_bilinear(src, h, w, y, x);
    }
  }
  return out;
}

Tensor read_luminance(const std::filesystem::path& path) {
  cv::Mat img;
  try {
    img = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  } catch (const cv::Exception& e) {
    throw DataError("cannot decode image " + path.string() + ": " + e.what());
  }
  if (img.empty()) throw DataError("cannot decode image " + path.string());
  if (img.depth() != CV_8U) throw DataError("unsupported bit depth in " + path.string() + " (8-bit only)");
  const int channels = img.channels();
  if (channels != 1 && channels != 3 && channels != 4) {
    throw DataError("unsupported channel count " + std::to_string(channels) + " in " + path.string());
  }
  const auto rows = static_cast<std::size_t>(img.rows), cols = static_cast<std::size_t>(img.cols);
  Tensor out({rows, cols});
  auto dst = out.mutable_data();
  for (std::size_t i = 0; i < rows; ++i) {
    const unsigned char* row = img.ptr<unsigned char>(static_cast<int>(i));
    for (std::size_t j = 0; j < cols; ++j) {
      if (channels == 1) {
        dst[i * cols + j] = row[j];
      } else {
        // OpenCV stores color as BGR(A).
        const unsigned char* px = row + j * static_cast<std::size_t>(channels);
        const int weighted = 299 * px[2] + 587 * px[1] + 114 * px[0];
        dst[i * cols + j] = static_cast<double>(weighted) / 1000.0;
      }
    }
  }
  return out;
}

void write_png(const std::filesystem::path& path, const Tensor& image) {
  if (image.rank() != 2) throw ShapeError("write_png expects an (H,W) image, got " + shape_str(image.shape()));
  const int rows = static_cast<int>(image.dim(0)), cols = static_cast<int>(image.dim(1));
  cv::Mat img(rows, cols, CV_8UC1);
  const auto src = image.data();
  for (int i = 0; i < rows; ++i) {
    auto* row = img.ptr<unsigned char>(i);
    for (int j = 0; j < cols; ++j) {
      const double v = std::clamp(src[static_cast<std::size_t>(i * cols + j)], 0.0, 1.0);
      row[j] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), img)) throw DataError("cannot write image " + path.string());
}

}  // namespace sleepguard
