// OpenMP kernels. Convolution lowers to im2col + one Eigen GEMM over all
// frames of a batch; everything else parallelizes over frames or channels.
// Reductions run in a fixed order per channel, so results do not depend on
// the thread count.

#include <Eigen/Core>
#include <cmath>
#include <cstring>

#include "ffn/kernels.hpp"
#include "kernels_instantiate.hpp"

namespace ffn::kernels {

namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstRowMap = Eigen::Map<const RowMatrix<T>>;
template <typename T>
using RowMap = Eigen::Map<RowMatrix<T>>;

void check_weight(std::size_t have, std::size_t want, const char* what) {
  if (have != want) {
    throw ShapeError(std::string(what) + ": expected " + std::to_string(want) +
                     " weights, got " + std::to_string(have));
  }
}

// columns(r, f * P + p) with r = (ci * k + ky) * k + kx over output pixel p.
template <typename T>
void im2col(const FeatureMap<T>& in, const ConvGeometry& g, int oh, int ow, RowMatrix<T>& cols) {
  const int rows = g.in_channels * g.kernel * g.kernel;
  const long P = static_cast<long>(oh) * ow;
  const long stride = P * in.frames;
  cols.resize(rows, stride);
  T* base = cols.data();
#pragma omp parallel for schedule(static)
  for (int f = 0; f < in.frames; ++f) {
    for (int ci = 0; ci < g.in_channels; ++ci) {
      const T* src = in.channel(f, ci);
      for (int ky = 0; ky < g.kernel; ++ky)
        for (int kx = 0; kx < g.kernel; ++kx) {
          const int r = (ci * g.kernel + ky) * g.kernel + kx;
          T* dst = base + r * stride + f * P;
          for (int y = 0; y < oh; ++y) {
            const int iy = y * g.stride - g.padding + ky;
            if (iy < 0 || iy >= in.height) {
              std::fill(dst + y * ow, dst + (y + 1) * ow, T(0));
              continue;
            }
            for (int x = 0; x < ow; ++x) {
              const int ix = x * g.stride - g.padding + kx;
              dst[y * ow + x] = (ix < 0 || ix >= in.width) ? T(0) : src[iy * in.width + ix];
            }
          }
        }
    }
  }
}

template <typename T>
void col2im_add(const RowMatrix<T>& cols, const ConvGeometry& g, int oh, int ow,
                FeatureMap<T>& grad_in) {
  const long P = static_cast<long>(oh) * ow;
  const long stride = P * grad_in.frames;
  const T* base = cols.data();
#pragma omp parallel for schedule(static)
  for (int f = 0; f < grad_in.frames; ++f) {
    for (int ci = 0; ci < g.in_channels; ++ci) {
      T* dst = grad_in.channel(f, ci);
      for (int ky = 0; ky < g.kernel; ++ky)
        for (int kx = 0; kx < g.kernel; ++kx) {
          const int r = (ci * g.kernel + ky) * g.kernel + kx;
          const T* src = base + r * stride + f * P;
          for (int y = 0; y < oh; ++y) {
            const int iy = y * g.stride - g.padding + ky;
            if (iy < 0 || iy >= grad_in.height) continue;
            for (int x = 0; x < ow; ++x) {
              const int ix = x * g.stride - g.padding + kx;
              if (ix >= 0 && ix < grad_in.width) dst[iy * grad_in.width + ix] += src[y * ow + x];
            }
          }
        }
    }
  }
}

}  // namespace

template <typename T>
void conv2d_forward(const FeatureMap<T>& in, std::span<const T> weight, const ConvGeometry& g,
                    FeatureMap<T>& out) {
  if (in.channels != g.in_channels) throw ShapeError("conv2d: input channel mismatch");
  check_weight(weight.size(), g.weight_size(), "conv2d");
  const int oh = g.out_extent(in.height), ow = g.out_extent(in.width);
  const long P = static_cast<long>(oh) * ow;
  RowMatrix<T> cols;
  im2col(in, g, oh, ow, cols);
  ConstRowMap<T> w(weight.data(), g.out_channels, cols.rows());
  RowMatrix<T> prod = w * cols;  // (out_channels, frames * P)
  out = FeatureMap<T>(in.frames, g.out_channels, oh, ow);
#pragma omp parallel for schedule(static)
  for (int f = 0; f < in.frames; ++f)
    for (int co = 0; co < g.out_channels; ++co)
      std::memcpy(out.channel(f, co), prod.data() + co * prod.cols() + f * P, sizeof(T) * P);
}

template <typename T>
void conv2d_backward(const FeatureMap<T>& in, std::span<const T> weight, const ConvGeometry& g,
                     const FeatureMap<T>& grad_out, std::span<T> grad_weight,
                     FeatureMap<T>* grad_in) {
  check_weight(weight.size(), g.weight_size(), "conv2d_backward");
  check_weight(grad_weight.size(), g.weight_size(), "conv2d_backward");
  const int oh = grad_out.height, ow = grad_out.width;
  const long P = static_cast<long>(oh) * ow;
  RowMatrix<T> gout(g.out_channels, P * in.frames);
#pragma omp parallel for schedule(static)
  for (int f = 0; f < in.frames; ++f)
    for (int co = 0; co < g.out_channels; ++co)
      std::memcpy(gout.data() + co * gout.cols() + f * P, grad_out.channel(f, co), sizeof(T) * P);

  RowMatrix<T> cols;
  im2col(in, g, oh, ow, cols);
  RowMap<T> gw(grad_weight.data(), g.out_channels, cols.rows());
  gw.noalias() += gout * cols.transpose();

  if (grad_in != nullptr) {
    if (!grad_in->same_shape(in)) grad_in->reshape_like(in);
    ConstRowMap<T> w(weight.data(), g.out_channels, cols.rows());
    RowMatrix<T> gcols = w.transpose() * gout;
    col2im_add(gcols, g, oh, ow, *grad_in);
  }
}

template <typename T>
void depthwise_forward(const FeatureMap<T>& in, std::span<const T> kernel, int k,
                       FeatureMap<T>& out) {
  check_weight(kernel.size(), static_cast<std::size_t>(in.channels) * k * k, "depthwise");
  out = FeatureMap<T>(in.frames, in.channels, in.height, in.width);
  const int pad = k / 2, H = in.height, W = in.width;
#pragma omp parallel for collapse(2) schedule(static)
  for (int f = 0; f < in.frames; ++f)
    for (int c = 0; c < in.channels; ++c) {
      const T* src = in.channel(f, c);
      T* dst = out.channel(f, c);
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          const T w = kernel[(c * k + ky) * k + kx];
          if (w == T(0)) continue;
          const int dy = ky - pad, dx = kx - pad;
          for (int y = std::max(0, -dy); y < std::min(H, H - dy); ++y)
            for (int x = std::max(0, -dx); x < std::min(W, W - dx); ++x)
              dst[y * W + x] += w * src[(y + dy) * W + x + dx];
        }
    }
}

template <typename T>
void depthwise_backward(const FeatureMap<T>& in, std::span<const T> kernel, int k,
                        const FeatureMap<T>& grad_out, std::span<T> grad_kernel,
                        FeatureMap<T>* grad_in) {
  check_weight(kernel.size(), static_cast<std::size_t>(in.channels) * k * k, "depthwise_backward");
  const int pad = k / 2, H = in.height, W = in.width;
#pragma omp parallel for schedule(static)
  for (int c = 0; c < in.channels; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const int dy = ky - pad, dx = kx - pad;
        double acc = 0;
        for (int f = 0; f < in.frames; ++f) {
          const T* src = in.channel(f, c);
          const T* go = grad_out.channel(f, c);
          for (int y = std::max(0, -dy); y < std::min(H, H - dy); ++y)
            for (int x = std::max(0, -dx); x < std::min(W, W - dx); ++x)
              acc += go[y * W + x] * src[(y + dy) * W + x + dx];
        }
        grad_kernel[(c * k + ky) * k + kx] += static_cast<T>(acc);
      }

  if (grad_in == nullptr) return;
  if (!grad_in->same_shape(in)) grad_in->reshape_like(in);
#pragma omp parallel for collapse(2) schedule(static)
  for (int f = 0; f < in.frames; ++f)
    for (int c = 0; c < in.channels; ++c) {
      const T* go = grad_out.channel(f, c);
      T* gi = grad_in->channel(f, c);
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          const T w = kernel[(c * k + ky) * k + kx];
          if (w == T(0)) continue;
          const int dy = ky - pad, dx = kx - pad;
          for (int y = std::max(0, -dy); y < std::min(H, H - dy); ++y)
            for (int x = std::max(0, -dx); x < std::min(W, W - dx); ++x)
              gi[(y + dy) * W + x + dx] += w * go[y * W + x];
        }
    }
}

template <typename T>
void batch_norm_train(const FeatureMap<T>& in, std::span<const T> gamma, std::span<const T> beta,
                      T eps, FeatureMap<T>& out, BatchMoments<T>& moments) {
  const int C = in.channels;
  const std::size_t plane = in.plane();
  const double count = static_cast<double>(in.frames) * plane;
  moments.mean.assign(C, T(0));
  moments.var.assign(C, T(0));
  out.reshape_like(in);
#pragma omp parallel for schedule(static)
  for (int c = 0; c < C; ++c) {
    double sum = 0;
    for (int f = 0; f < in.frames; ++f) {
      const T* x = in.channel(f, c);
      for (std::size_t i = 0; i < plane; ++i) sum += x[i];
    }
    const double mean = sum / count;
    double sq = 0;
    for (int f = 0; f < in.frames; ++f) {
      const T* x = in.channel(f, c);
      for (std::size_t i = 0; i < plane; ++i) sq += (x[i] - mean) * (x[i] - mean);
    }
    const double var = sq / count;
    moments.mean[c] = static_cast<T>(mean);
    moments.var[c] = static_cast<T>(var);
    const double scale = gamma[c] / std::sqrt(var + eps);
    const double shift = beta[c] - mean * scale;
    for (int f = 0; f < in.frames; ++f) {
      const T* x = in.channel(f, c);
      T* y = out.channel(f, c);
      for (std::size_t i = 0; i < plane; ++i) y[i] = static_cast<T>(x[i] * scale + shift);
    }
  }
}

template <typename T>
void batch_norm_eval(const FeatureMap<T>& in, std::span<const T> gamma, std::span<const T> beta,
                     std::span<const T> mean, std::span<const T> var, T eps, FeatureMap<T>& out) {
  out.reshape_like(in);
  const std::size_t plane = in.plane();
#pragma omp parallel for collapse(2) schedule(static)
  for (int f = 0; f < in.frames; ++f)
    for (int c = 0; c < in.channels; ++c) {
      const double scale = gamma[c] / std::sqrt(static_cast<double>(var[c]) + eps);
      const double shift = beta[c] - mean[c] * scale;
      const T* x = in.channel(f, c);
      T* y = out.channel(f, c);
      for (std::size_t i = 0; i < plane; ++i) y[i] = static_cast<T>(x[i] * scale + shift);
    }
}

template <typename T>
void batch_norm_backward(const FeatureMap<T>& in, std::span<const T> gamma, std::span<const T> mean,
                         std::span<const T> var, T eps, bool batch_stats,
                         const FeatureMap<T>& grad_out, std::span<T> grad_gamma,
                         std::span<T> grad_beta, FeatureMap<T>& grad_in) {
  if (!grad_in.same_shape(in)) grad_in.reshape_like(in);
  const std::size_t plane = in.plane();
  const double count = static_cast<double>(in.frames) * plane;
#pragma omp parallel for schedule(static)
  for (int c = 0; c < in.channels; ++c) {
    const double inv = 1.0 / std::sqrt(static_cast<double>(var[c]) + eps);
    const double mu = mean[c];
    double sum_dy = 0, sum_dy_xhat = 0;
    for (int f = 0; f < in.frames; ++f) {
      const T* x = in.channel(f, c);
      const T* dy = grad_out.channel(f, c);
      for (std::size_t i = 0; i < plane; ++i) {
        sum_dy += dy[i];
        sum_dy_xhat += dy[i] * (x[i] - mu) * inv;
      }
    }
    grad_gamma[c] += static_cast<T>(sum_dy_xhat);
    grad_beta[c] += static_cast<T>(sum_dy);
    const double g = gamma[c] * inv;
    const double mean_dy = batch_stats ? sum_dy / count : 0.0;
    const double mean_dy_xhat = batch_stats ? sum_dy_xhat / count : 0.0;
    for (int f = 0; f < in.frames; ++f) {
      const T* x = in.channel(f, c);
      const T* dy = grad_out.channel(f, c);
      T* dx = grad_in.channel(f, c);
      for (std::size_t i = 0; i < plane; ++i) {
        const double xhat = (x[i] - mu) * inv;
        dx[i] += static_cast<T>(g * (dy[i] - mean_dy - xhat * mean_dy_xhat));
      }
    }
  }
}

template <typename T>
void temporal_shift(const FeatureMap<T>& in, int time, int fold, bool reverse, FeatureMap<T>& out) {
  if (time <= 0 || in.frames % time != 0) throw ShapeError("temporal_shift: frames not divisible by time");
  out.reshape_like(in);
  const std::size_t plane = in.plane();
#pragma omp parallel for schedule(static)
  for (int frame = 0; frame < in.frames; ++frame) {
    const int t = frame % time;
    const int clip_start = frame - t;
    for (int c = 0; c < in.channels; ++c) {
      int src = t;
      if (c < fold) src = reverse ? t - 1 : t + 1;
      else if (c < 2 * fold) src = reverse ? t + 1 : t - 1;
      if (src < 0 || src >= time) continue;
      std::memcpy(out.channel(frame, c), in.channel(clip_start + src, c), sizeof(T) * plane);
    }
  }
}

template <typename T>
void relu_forward(FeatureMap<T>& x) {
  T* d = x.data.data();
  const long n = static_cast<long>(x.size());
#pragma omp parallel for simd schedule(static)
  for (long i = 0; i < n; ++i) d[i] = d[i] > T(0) ? d[i] : T(0);
}

template <typename T>
void relu_backward(const FeatureMap<T>& out, FeatureMap<T>& grad) {
  const T* o = out.data.data();
  T* g = grad.data.data();
  const long n = static_cast<long>(out.size());
#pragma omp parallel for simd schedule(static)
  for (long i = 0; i < n; ++i) g[i] = o[i] > T(0) ? g[i] : T(0);
}

template <typename T>
void global_avg_pool(const FeatureMap<T>& in, int time, Matrix<T>& out) {
  const int clips = in.frames / time;
  out = Matrix<T>(clips, in.channels);
  const std::size_t plane = in.plane();
  const double count = static_cast<double>(time) * plane;
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < clips; ++n)
    for (int c = 0; c < in.channels; ++c) {
      double sum = 0;
      for (int t = 0; t < time; ++t) {
        const T* x = in.channel(n * time + t, c);
        for (std::size_t i = 0; i < plane; ++i) sum += x[i];
      }
      out(n, c) = static_cast<T>(sum / count);
    }
}

template <typename T>
void global_avg_pool_backward(const Matrix<T>& grad_out, int time, FeatureMap<T>& grad_in) {
  const std::size_t plane = grad_in.plane();
  const T scale = T(1) / static_cast<T>(time * plane);
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < grad_out.rows; ++n)
    for (int c = 0; c < grad_out.cols; ++c) {
      const T v = grad_out(n, c) * scale;
      for (int t = 0; t < time; ++t) {
        T* g = grad_in.channel(n * time + t, c);
        std::fill(g, g + plane, v);
      }
    }
}

FFN_INSTANTIATE(float)
FFN_INSTANTIATE(double)

}  // namespace ffn::kernels
