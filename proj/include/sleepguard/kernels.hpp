#pragma once

// Raw layer kernels over contiguous CHW buffers. The model code drives
// these; they are public so tests can check them against naive loops.

#include <cstddef>
#include <vector>

namespace sleepguard::kernels {

struct ConvDims {
  std::size_t in_channels, height, width;
  std::size_t out_channels, kernel;
  std::size_t out_height() const { return height - kernel + 1; }
  std::size_t out_width() const { return width - kernel + 1; }
  std::size_t patch() const { return in_channels * kernel * kernel; }
  std::size_t positions() const { return out_height() * out_width(); }
};

/// Unfolds the input into a (patch x positions) matrix; row r = (c, u, v).
void im2col(const ConvDims& d, const double* in, std::vector<double>& cols);

/// out[o,i,j] = bias[o] + sum_{c,u,v} w[o,c,u,v] * in[c,i+u,j+v].
/// Each output accumulates bias first, then terms in (c, u, v) order.
void conv2d_forward(const ConvDims& d, const double* in, const double* weight,
                    const double* bias, double* out);

/// Accumulates weight/bias gradients; writes d_in (overwrites) when non-null.
void conv2d_backward(const ConvDims& d, const double* in, const double* weight,
                     const double* d_out, double* d_weight, double* d_bias, double* d_in);

struct PoolDims {
  std::size_t channels, height, width;
  std::size_t window, stride;
  std::size_t out_height() const { return (height - window) / stride + 1; }
  std::size_t out_width() const { return (width - window) / stride + 1; }
};

/// Window mean; terms summed in row-major window order, then divided.
void avg_pool_forward(const PoolDims& d, const double* in, double* out);
void avg_pool_backward(const PoolDims& d, const double* d_out, double* d_in);

/// For each sample s: out[s][o] = bias[o] + sum_i w[o,i] * in[s][i].
/// Processing samples together reads each weight row once per batch.
void dense_forward(std::size_t in_features, std::size_t out_features, std::size_t batch,
                   const double* const* in, const double* weight, const double* bias,
                   double* const* out);

/// Accumulates weight/bias gradients summed over the batch; writes d_in[s]
/// (overwrites) when d_in is non-null.
void dense_backward(std::size_t in_features, std::size_t out_features, std::size_t batch,
                    const double* const* in, const double* weight, const double* const* d_out,
                    double* d_weight, double* d_bias, double* const* d_in);

}  // namespace sleepguard::kernels
