#include "sleepguard/kernels.hpp"

#include <algorithm>

#include <Eigen/Core>

namespace sleepguard::kernels {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

}  // namespace

void im2col(const ConvDims& d, const double* in, std::vector<double>& cols) {
  const std::size_t oh = d.out_height(), ow = d.out_width(), k = d.kernel;
  const std::size_t positions = oh * ow;
  cols.resize(d.patch() * positions);
  double* dst = cols.data();
  for (std::size_t c = 0; c < d.in_channels; ++c) {
    const double* plane = in + c * d.height * d.width;
    for (std::size_t u = 0; u < k; ++u) {
      for (std::size_t v = 0; v < k; ++v) {
        for (std::size_t i = 0; i < oh; ++i) {
          const double* src = plane + (i + u) * d.width + v;
          std::copy(src, src + ow, dst);
          dst += ow;
        }
      }
    }
  }
}

void conv2d_forward(const ConvDims& d, const double* in, const double* weight,
                    const double* bias, double* out) {
  thread_local std::vector<double> cols;
  im2col(d, in, cols);
  const std::size_t positions = d.positions(), patch = d.patch();
  // Positions are processed in register-sized tiles; within a tile every
  // output still accumulates bias, then patch rows in ascending order.
  constexpr std::size_t kTile = 16;
  const std::size_t full = positions - positions % kTile;
  for (std::size_t p0 = 0; p0 < full; p0 += kTile) {
    for (std::size_t o = 0; o < d.out_channels; ++o) {
      const double* w = weight + o * patch;
      double acc[kTile];
      for (std::size_t t = 0; t < kTile; ++t) acc[t] = bias[o];
      for (std::size_t r = 0; r < patch; ++r) {
        const double wr = w[r];
        const double* src = cols.data() + r * positions + p0;
#pragma omp simd
        for (std::size_t t = 0; t < kTile; ++t) acc[t] += wr * src[t];
      }
      double* dst = out + o * positions + p0;
      for (std::size_t t = 0; t < kTile; ++t) dst[t] = acc[t];
    }
  }
  for (std::size_t o = 0; o < d.out_channels; ++o) {
    const double* w = weight + o * patch;
    for (std::size_t p = full; p < positions; ++p) {
      double acc = bias[o];
      for (std::size_t r = 0; r < patch; ++r) acc += w[r] * cols[r * positions + p];
      out[o * positions + p] = acc;
    }
  }
}

void conv2d_backward(const ConvDims& d, const double* in, const double* weight,
                     const double* d_out, double* d_weight, double* d_bias, double* d_in) {
  const auto positions = static_cast<Eigen::Index>(d.positions());
  const auto patch = static_cast<Eigen::Index>(d.patch());
  const auto outs = static_cast<Eigen::Index>(d.out_channels);
  ConstMatrixMap g(d_out, outs, positions);
  thread_local std::vector<double> cols;
  if (d_weight) {
    im2col(d, in, cols);
    ConstMatrixMap c(cols.data(), patch, positions);
    MatrixMap gw(d_weight, outs, patch);
    gw.noalias() += g * c.transpose();
    // Plain loop: Eigen's vectorized reductions peel by pointer alignment,
    // which would make the sum depend on where the buffer happens to live.
    for (std::size_t o = 0; o < d.out_channels; ++o) {
      const double* row = d_out + o * d.positions();
      double s = 0.0;
      for (std::size_t p = 0; p < d.positions(); ++p) s += row[p];
      d_bias[o] += s;
    }
  }
  if (!d_in) return;

  thread_local std::vector<double> d_cols;
  d_cols.resize(d.patch() * d.positions());
  ConstMatrixMap w(weight, outs, patch);
  MatrixMap dc(d_cols.data(), patch, positions);
  dc.noalias() = w.transpose() * g;

  const std::size_t oh = d.out_height(), ow = d.out_width(), k = d.kernel;
  std::fill(d_in, d_in + d.in_channels * d.height * d.width, 0.0);
  const double* src = d_cols.data();
  for (std::size_t c = 0; c < d.in_channels; ++c) {
    double* plane = d_in + c * d.height * d.width;
    for (std::size_t u = 0; u < k; ++u) {
      for (std::size_t v = 0; v < k; ++v) {
        for (std::size_t i = 0; i < oh; ++i) {
          double* dst = plane + (i + u) * d.width + v;
          for (std::size_t j = 0; j < ow; ++j) dst[j] += src[j];
          src += ow;
        }
      }
    }
  }
}

void avg_pool_forward(const PoolDims& d, const double* in, double* out) {
  const std::size_t oh = d.out_height(), ow = d.out_width();
  const double inv = 1.0 / static_cast<double>(d.window * d.window);
  for (std::size_t c = 0; c < d.channels; ++c) {
    const double* src = in + c * d.height * d.width;
    double* dst = out + c * oh * ow;
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        double s = 0.0;
        for (std::size_t u = 0; u < d.window; ++u) {
          const double* row = src + (i * d.stride + u) * d.width + j * d.stride;
          for (std::size_t v = 0; v < d.window; ++v) s += row[v];
        }
        dst[i * ow + j] = s * inv;
      }
    }
  }
}

void avg_pool_backward(const PoolDims& d, const double* d_out, double* d_in) {
  const std::size_t oh = d.out_height(), ow = d.out_width();
  const double inv = 1.0 / static_cast<double>(d.window * d.window);
  std::fill(d_in, d_in + d.channels * d.height * d.width, 0.0);
  for (std::size_t c = 0; c < d.channels; ++c) {
    const double* g = d_out + c * oh * ow;
    double* dst = d_in + c * d.height * d.width;
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        const double share = g[i * ow + j] * inv;
        for (std::size_t u = 0; u < d.window; ++u) {
          double* row = dst + (i * d.stride + u) * d.width + j * d.stride;
          for (std::size_t v = 0; v < d.window; ++v) row[v] += share;
        }
      }
    }
  }
}

void dense_forward(std::size_t in_features, std::size_t out_features, std::size_t batch,
                   const double* const* in, const double* weight, const double* bias,
                   double* const* out) {
  const auto n = static_cast<Eigen::Index>(batch);
  const auto fin = static_cast<Eigen::Index>(in_features);
  const auto fout = static_cast<Eigen::Index>(out_features);
  thread_local RowMatrix x, y;
  x.resize(n, fin);
  for (Eigen::Index s = 0; s < n; ++s) x.row(s) = Eigen::Map<const Eigen::RowVectorXd>(in[s], fin);
  ConstMatrixMap w(weight, fout, fin);
  y.noalias() = x * w.transpose();
  Eigen::Map<const Eigen::RowVectorXd> b(bias, fout);
  for (Eigen::Index s = 0; s < n; ++s) {
    Eigen::Map<Eigen::RowVectorXd>(out[s], fout) = y.row(s) + b;
  }
}

void dense_backward(std::size_t in_features, std::size_t out_features, std::size_t batch,
                    const double* const* in, const double* weight, const double* const* d_out,
                    double* d_weight, double* d_bias, double* const* d_in) {
  const auto n = static_cast<Eigen::Index>(batch);
  const auto fin = static_cast<Eigen::Index>(in_features);
  const auto fout = static_cast<Eigen::Index>(out_features);
  thread_local RowMatrix g, x, dx;
  g.resize(n, fout);
  for (Eigen::Index s = 0; s < n; ++s) g.row(s) = Eigen::Map<const Eigen::RowVectorXd>(d_out[s], fout);
  if (d_bias) {
    Eigen::Map<Eigen::RowVectorXd> gb(d_bias, fout);
    for (Eigen::Index s = 0; s < n; ++s) gb += g.row(s);
  }
  if (d_weight) {
    x.resize(n, fin);
    for (Eigen::Index s = 0; s < n; ++s) x.row(s) = Eigen::Map<const Eigen::RowVectorXd>(in[s], fin);
    MatrixMap gw(d_weight, fout, fin);
    gw.noalias() += g.transpose() * x;
  }
  if (d_in) {
    ConstMatrixMap w(weight, fout, fin);
    dx.noalias() = g * w;
    for (Eigen::Index s = 0; s < n; ++s) Eigen::Map<Eigen::RowVectorXd>(d_in[s], fin) = dx.row(s);
  }
}

}  // namespace sleepguard::kernels
