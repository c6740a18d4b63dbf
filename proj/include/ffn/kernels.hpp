#pragma once

// Numeric kernels behind the model. Two implementations share one signature
// set: `ffn::kernels` (OpenMP over frames/channels, GEMM-backed convolution)
// is what the model runs; `ffn::reference` is a plain serial version kept as
// the test oracle and the benchmark baseline.
//
// Every backward kernel *accumulates* into its gradient outputs, so callers
// zero them once per step.

#include <span>

#include "ffn/tensor.hpp"

namespace ffn {

struct ConvGeometry {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;
  int stride = 1;
  int padding = 1;

  int out_extent(int in) const { return (in + 2 * padding - kernel) / stride + 1; }
  std::size_t weight_size() const {
    return static_cast<std::size_t>(out_channels) * in_channels * kernel * kernel;
  }
};

/// Per-channel statistics of one batch-normalization call in training mode.
template <typename T>
struct BatchMoments {
  std::vector<T> mean;
  std::vector<T> var;  // biased (divides by element count)
};

#define FFN_DECLARE_KERNELS                                                              \
  template <typename T>                                                                  \
  void conv2d_forward(const FeatureMap<T>& in, std::span<const T> weight,                \
                      const ConvGeometry& g, FeatureMap<T>& out);                        \
  template <typename T>                                                                  \
  void conv2d_backward(const FeatureMap<T>& in, std::span<const T> weight,               \
                       const ConvGeometry& g, const FeatureMap<T>& grad_out,             \
                       std::span<T> grad_weight, FeatureMap<T>* grad_in);                \
  /* out = depthwise(in, kernel): k x k per channel, stride 1, zero "same" padding. */  \
  template <typename T>                                                                  \
  void depthwise_forward(const FeatureMap<T>& in, std::span<const T> kernel, int k,      \
                         FeatureMap<T>& out);                                            \
  template <typename T>                                                                  \
  void depthwise_backward(const FeatureMap<T>& in, std::span<const T> kernel, int k,     \
                          const FeatureMap<T>& grad_out, std::span<T> grad_kernel,       \
                          FeatureMap<T>* grad_in);                                       \
  template <typename T>                                                                  \
  void batch_norm_train(const FeatureMap<T>& in, std::span<const T> gamma,               \
                        std::span<const T> beta, T eps, FeatureMap<T>& out,              \
                        BatchMoments<T>& moments);                                       \
  template <typename T>                                                                  \
  void batch_norm_eval(const FeatureMap<T>& in, std::span<const T> gamma,                \
                       std::span<const T> beta, std::span<const T> mean,                 \
                       std::span<const T> var, T eps, FeatureMap<T>& out);               \
  /* Gradient through normalization by the given moments. When `batch_stats` is true */ \
  /* the moments are functions of the input (training mode). */                         \
  template <typename T>                                                                  \
  void batch_norm_backward(const FeatureMap<T>& in, std::span<const T> gamma,            \
                           std::span<const T> mean, std::span<const T> var, T eps,       \
                           bool batch_stats, const FeatureMap<T>& grad_out,              \
                           std::span<T> grad_gamma, std::span<T> grad_beta,              \
                           FeatureMap<T>& grad_in);                                      \
  /* Channels [0, fold) read frame t+1, [fold, 2*fold) read frame t-1, zero-padded */  \
  /* at clip boundaries. `reverse` applies the adjoint (used for the gradient). */      \
  template <typename T>                                                                  \
  void temporal_shift(const FeatureMap<T>& in, int time, int fold, bool reverse,         \
                      FeatureMap<T>& out);                                               \
  template <typename T>                                                                  \
  void relu_forward(FeatureMap<T>& x);                                                   \
  template <typename T>                                                                  \
  void relu_backward(const FeatureMap<T>& out, FeatureMap<T>& grad);                     \
  /* Mean over (time, height, width) per clip: (clips, channels). */                    \
  template <typename T>                                                                  \
  void global_avg_pool(const FeatureMap<T>& in, int time, Matrix<T>& out);               \
  template <typename T>                                                                  \
  void global_avg_pool_backward(const Matrix<T>& grad_out, int time, FeatureMap<T>& grad_in);

namespace kernels {
FFN_DECLARE_KERNELS
}  // namespace kernels

namespace reference {
FFN_DECLARE_KERNELS
}  // namespace reference

#undef FFN_DECLARE_KERNELS

}  // namespace ffn
