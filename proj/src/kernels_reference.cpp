// Straightforward serial loops. Slow on purpose: these are the oracle the
// parallel kernels are checked against, so they stay as literal as possible.

#include <cmath>

#include "ffn/kernels.hpp"
#include "kernels_instantiate.hpp"

namespace ffn::reference {

namespace {

void check_weight(std::size_t have, std::size_t want, const char* what) {
  if (have != want) {
    throw ShapeError(std::string(what) + ": expected " + std::to_string(want) +
                     " weights, got " + std::to_string(have));
  }
}

}  // namespace

template <typename T>
void conv2d_forward(const FeatureMap<T>& in, std::span<const T> weight, const ConvGeometry& g,
                    FeatureMap<T>& out) {
  if (in.channels != g.in_channels) throw ShapeError("conv2d: input channel mismatch");
  check_weight(weight.size(), g.weight_size(), "conv2d");
  const int oh = g.out_extent(in.height), ow = g.out_extent(in.width);
  out = FeatureMap<T>(in.frames, g.out_channels, oh, ow);
  for (int f = 0; f < in.frames; ++f)
    for (int co = 0; co < g.out_channels; ++co)
      for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
          T acc = 0;
          for (int ci = 0; ci < g.in_channels; ++ci)
            for (int ky = 0; ky < g.kernel; ++ky)
              for (int kx = 0; kx < g.kernel; ++kx) {
                const int iy = y * g.stride - g.padding + ky;
                const int ix = x * g.stride - g.padding + kx;
                if (iy < 0 || iy >= in.height || ix < 0 || ix >= in.width) continue;
                acc += in.channel(f, ci)[iy * in.width + ix] *
                       weight[((co * g.in_channels + ci) * g.kernel + ky) * g.kernel + kx];
              }
          out.channel(f, co)[y * ow + x] = acc;
        }
}

template <typename T>
void conv2d_backward(const FeatureMap<T>& in, std::span<const T> weight, const ConvGeometry& g,
                     const FeatureMap<T>& grad_out, std::span<T> grad_weight,
                     FeatureMap<T>* grad_in) {
  check_weight(weight.size(), g.weight_size(), "conv2d_backward");
  check_weight(grad_weight.size(), g.weight_size(), "conv2d_backward");
  const int oh = grad_out.height, ow = grad_out.width;
  if (grad_in != nullptr && !grad_in->same_shape(in)) grad_in->reshape_like(in);
  for (int f = 0; f < in.frames; ++f)
    for (int co = 0; co < g.out_channels; ++co)
      for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
          const T go = grad_out.channel(f, co)[y * ow + x];
          for (int ci = 0; ci < g.in_channels; ++ci)
            for (int ky = 0; ky < g.kernel; ++ky)
              for (int kx = 0; kx < g.kernel; ++kx) {
                const int iy = y * g.stride - g.padding + ky;
                const int ix = x * g.stride - g.padding + kx;
                if (iy < 0 || iy >= in.height || ix < 0 || ix >= in.width) continue;
                const std::size_t w = ((co * g.in_channels + ci) * g.kernel + ky) * g.kernel + kx;
                grad_weight[w] += go * in.channel(f, ci)[iy * in.width + ix];
                if (grad_in != nullptr) grad_in->channel(f, ci)[iy * in.width + ix] += go * weight[w];
              }
        }
}

template <typename T>
void depthwise_forward(const FeatureMap<T>& in, std::span<const T> kernel, int k,
                       FeatureMap<T>& out) {
  check_weight(kernel.size(), static_cast<std::size_t>(in.channels) * k * k, "depthwise");
  out = FeatureMap<T>(in.frames, in.channels, in.height, in.width);
  const int pad = k / 2;
  for (int f = 0; f < in.frames; ++f)
    for (int c = 0; c < in.channels; ++c)
      for (int y = 0; y < in.height; ++y)
        for (int x = 0; x < in.width; ++x) {
          T acc = 0;
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const int iy = y - pad + ky, ix = x - pad + kx;
              if (iy < 0 || iy >= in.height || ix < 0 || ix >= in.width) continue;
              acc += in.channel(f, c)[iy * in.width + ix] * kernel[(c * k + ky) * k + kx];
            }
          out.channel(f, c)[y * in.width + x] = acc;
        }
}

template <typename T>
void depthwise_backward(const FeatureMap<T>& in, std::span<const T> kernel, int k,
                        const FeatureMap<T>& grad_out, std::span<T> grad_kernel,
                        FeatureMap<T>* grad_in) {
  check_weight(kernel.size(), static_cast<std::size_t>(in.channels) * k * k, "depthwise_backward");
  if (grad_in != nullptr && !grad_in->same_shape(in)) grad_in->reshape_like(in);
  const int pad = k / 2;
  for (int f = 0; f < in.frames; ++f)
    for (int c = 0; c < in.channels; ++c)
      for (int y = 0; y < in.height; ++y)
        for (int x = 0; x < in.width; ++x) {
          const T go = grad_out.channel(f, c)[y * in.width + x];
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const int iy = y - pad + ky, ix = x - pad + kx;
              if (iy < 0 || iy >= in.height || ix < 0 || ix >= in.width) continue;
              const std::size_t w = (c * k + ky) * k + kx;
              grad_kernel[w] += go * in.channel(f, c)[iy * in.width + ix];
              if (grad_in != nullptr) grad_in->channel(f, c)[iy * in.width + ix] += go * kernel[w];
            }
        }
}

template <typename T>
void batch_norm_train(const FeatureMap<T>& in, std::span<const T> gamma, std::span<const T> beta,
                      T eps, FeatureMap<T>& out, BatchMoments<T>& moments) {
  const int C = in.channels;
  const double count = static_cast<double>(in.frames) * in.plane();
  moments.mean.assign(C, T(0));
  moments.var.assign(C, T(0));
  out.reshape_like(in);
  for (int c = 0; c < C; ++c) {
    double sum = 0;
    for (int f = 0; f < in.frames; ++f)
      for (std::size_t i = 0; i < in.plane(); ++i) sum += in.channel(f, c)[i];
    const double mean = sum / count;
    double sq = 0;
    for (int f = 0; f < in.frames; ++f)
      for (std::size_t i = 0; i < in.plane(); ++i) {
        const double d = in.channel(f, c)[i] - mean;
        sq += d * d;
      }
    const double var = sq / count;
    moments.mean[c] = static_cast<T>(mean);
    moments.var[c] = static_cast<T>(var);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (int f = 0; f < in.frames; ++f)
      for (std::size_t i = 0; i < in.plane(); ++i)
        out.channel(f, c)[i] =
            static_cast<T>(gamma[c] * (in.channel(f, c)[i] - mean) * inv + beta[c]);
  }
}

template <typename T>
void batch_norm_eval(const FeatureMap<T>& in, std::span<const T> gamma, std::span<const T> beta,
                     std::span<const T> mean, std::span<const T> var, T eps, FeatureMap<T>& out) {
  out.reshape_like(in);
  for (int f = 0; f < in.frames; ++f)
    for (int c = 0; c < in.channels; ++c) {
      const double inv = 1.0 / std::sqrt(static_cast<double>(var[c]) + eps);
      for (std::size_t i = 0; i < in.plane(); ++i)
        out.channel(f, c)[i] =
            static_cast<T>(gamma[c] * (in.channel(f, c)[i] - mean[c]) * inv + beta[c]);
    }
}

template <typename T>
void batch_norm_backward(const FeatureMap<T>& in, std::span<const T> gamma, std::span<const T> mean,
                         std::span<const T> var, T eps, bool batch_stats,
                         const FeatureMap<T>& grad_out, std::span<T> grad_gamma,
                         std::span<T> grad_beta, FeatureMap<T>& grad_in) {
  if (!grad_in.same_shape(in)) grad_in.reshape_like(in);
  const double count = static_cast<double>(in.frames) * in.plane();
  for (int c = 0; c < in.channels; ++c) {
    const double inv = 1.0 / std::sqrt(static_cast<double>(var[c]) + eps);
    double sum_dy = 0, sum_dy_xhat = 0;
    for (int f = 0; f < in.frames; ++f)
      for (std::size_t i = 0; i < in.plane(); ++i) {
        const double dy = grad_out.channel(f, c)[i];
        const double xhat = (in.channel(f, c)[i] - mean[c]) * inv;
        sum_dy += dy;
        sum_dy_xhat += dy * xhat;
      }
    grad_gamma[c] += static_cast<T>(sum_dy_xhat);
    grad_beta[c] += static_cast<T>(sum_dy);
    for (int f = 0; f < in.frames; ++f)
      for (std::size_t i = 0; i < in.plane(); ++i) {
        const double dy = grad_out.channel(f, c)[i];
        double dx = dy;
        if (batch_stats) {
          const double xhat = (in.channel(f, c)[i] - mean[c]) * inv;
          dx = dy - sum_dy / count - xhat * sum_dy_xhat / count;
        }
        grad_in.channel(f, c)[i] += static_cast<T>(gamma[c] * inv * dx);
      }
  }
}

template <typename T>
void temporal_shift(const FeatureMap<T>& in, int time, int fold, bool reverse, FeatureMap<T>& out) {
  out.reshape_like(in);
  const int clips = in.frames / time;
  for (int n = 0; n < clips; ++n)
    for (int t = 0; t < time; ++t)
      for (int c = 0; c < in.channels; ++c) {
        int src = t;
        if (c < fold) src = reverse ? t - 1 : t + 1;
        else if (c < 2 * fold) src = reverse ? t + 1 : t - 1;
        if (src < 0 || src >= time) continue;
        for (std::size_t i = 0; i < in.plane(); ++i)
          out.channel(n * time + t, c)[i] = in.channel(n * time + src, c)[i];
      }
}

template <typename T>
void relu_forward(FeatureMap<T>& x) {
  for (auto& v : x.data) v = v > T(0) ? v : T(0);
}

template <typename T>
void relu_backward(const FeatureMap<T>& out, FeatureMap<T>& grad) {
  for (std::size_t i = 0; i < out.size(); ++i)
    if (!(out.data[i] > T(0))) grad.data[i] = T(0);
}

template <typename T>
void global_avg_pool(const FeatureMap<T>& in, int time, Matrix<T>& out) {
  const int clips = in.frames / time;
  out = Matrix<T>(clips, in.channels);
  const double count = static_cast<double>(time) * in.plane();
  for (int n = 0; n < clips; ++n)
    for (int c = 0; c < in.channels; ++c) {
      double sum = 0;
      for (int t = 0; t < time; ++t)
        for (std::size_t i = 0; i < in.plane(); ++i) sum += in.channel(n * time + t, c)[i];
      out(n, c) = static_cast<T>(sum / count);
    }
}

template <typename T>
void global_avg_pool_backward(const Matrix<T>& grad_out, int time, FeatureMap<T>& grad_in) {
  const T scale = T(1) / static_cast<T>(time * grad_in.plane());
  for (int n = 0; n < grad_out.rows; ++n)
    for (int c = 0; c < grad_out.cols; ++c)
      for (int t = 0; t < time; ++t)
        for (std::size_t i = 0; i < grad_in.plane(); ++i)
          grad_in.channel(n * time + t, c)[i] = grad_out(n, c) * scale;
}

FFN_INSTANTIATE(float)
FFN_INSTANTIATE(double)

}  // namespace ffn::reference
