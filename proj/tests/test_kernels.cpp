#include <numeric>

#include "doctest.h"
#include "ffn/kernels.hpp"
#include "helpers.hpp"

using namespace ffn;
using test::max_abs_diff;
using test::random_map;
using test::random_vec;

namespace {

template <typename T>
double dot(const FeatureMap<T>& a, const FeatureMap<T>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += double(a.data[i]) * b.data[i];
  return s;
}

}  // namespace

TEST_CASE_TEMPLATE("conv2d parallel matches reference", T, float, double) {
  const double tol = std::is_same_v<T, float> ? 1e-4 : 1e-11;
  const ConvGeometry geoms[] = {{3, 5, 3, 1, 1}, {4, 6, 4, 4, 0}, {5, 7, 3, 2, 1}, {2, 3, 1, 1, 0}};
  for (const auto& g : geoms) {
    auto in = random_map<T>(3, g.in_channels, 9, 8, 1);
    auto w = random_vec<T>(g.weight_size(), 2);
    FeatureMap<T> a, b;
    kernels::conv2d_forward(in, std::span<const T>(w), g, a);
    reference::conv2d_forward(in, std::span<const T>(w), g, b);
    REQUIRE(a.same_shape(b));
    CHECK(a.height == g.out_extent(9));
    CHECK(a.width == g.out_extent(8));
    CHECK(max_abs_diff(a.data, b.data) < tol);

    auto gout = random_map<T>(a.frames, a.channels, a.height, a.width, 3);
    std::vector<T> gw1(w.size(), T(0.5)), gw2(w.size(), T(0.5));
    FeatureMap<T> gi1, gi2;
    gi1.reshape_like(in);
    gi2.reshape_like(in);
    kernels::conv2d_backward(in, std::span<const T>(w), g, gout, std::span<T>(gw1), &gi1);
    reference::conv2d_backward(in, std::span<const T>(w), g, gout, std::span<T>(gw2), &gi2);
    CHECK(max_abs_diff(gw1, gw2) < tol * 10);
    CHECK(max_abs_diff(gi1.data, gi2.data) < tol);
  }
}

TEST_CASE("conv2d hand-evaluated 3x3 sum") {
  // All-ones 3x3 input, all-ones 3x3 kernel, zero padding: each output counts
  // the in-bounds neighbours.
  FeatureMap<double> in(1, 1, 3, 3);
  std::fill(in.data.begin(), in.data.end(), 1.0);
  std::vector<double> w(9, 1.0);
  FeatureMap<double> out;
  kernels::conv2d_forward(in, std::span<const double>(w), {1, 1, 3, 1, 1}, out);
  const std::vector<double> expect = {4, 6, 4, 6, 9, 6, 4, 6, 4};
  CHECK(max_abs_diff(out.data, expect) == 0.0);
}

TEST_CASE_TEMPLATE("depthwise parallel matches reference", T, float, double) {
  const double tol = std::is_same_v<T, float> ? 1e-5 : 1e-12;
  for (int k : {1, 3, 5}) {
    auto in = random_map<T>(4, 6, 7, 5, 10 + k);
    auto ker = random_vec<T>(6 * k * k, 20 + k);
    FeatureMap<T> a, b;
    kernels::depthwise_forward(in, std::span<const T>(ker), k, a);
    reference::depthwise_forward(in, std::span<const T>(ker), k, b);
    REQUIRE(a.same_shape(in));
    CHECK(max_abs_diff(a.data, b.data) < tol);

    auto gout = random_map<T>(4, 6, 7, 5, 30 + k);
    std::vector<T> gk1(ker.size(), T(0)), gk2(ker.size(), T(0));
    FeatureMap<T> gi1, gi2;
    gi1.reshape_like(in);
    gi2.reshape_like(in);
    kernels::depthwise_backward(in, std::span<const T>(ker), k, gout, std::span<T>(gk1), &gi1);
    reference::depthwise_backward(in, std::span<const T>(ker), k, gout, std::span<T>(gk2), &gi2);
    CHECK(max_abs_diff(gk1, gk2) < tol * 100);
    CHECK(max_abs_diff(gi1.data, gi2.data) < tol);
  }
}

TEST_CASE_TEMPLATE("batch norm parallel matches reference", T, float, double) {
  const double tol = std::is_same_v<T, float> ? 1e-5 : 1e-12;
  auto in = random_map<T>(6, 5, 4, 4, 40, 2.0);
  auto gamma = random_vec<T>(5, 41, 1.0, 0.3);
  auto beta = random_vec<T>(5, 42);
  const T eps = T(1e-5);

  FeatureMap<T> a, b;
  BatchMoments<T> ma, mb;
  kernels::batch_norm_train(in, std::span<const T>(gamma), std::span<const T>(beta), eps, a, ma);
  reference::batch_norm_train(in, std::span<const T>(gamma), std::span<const T>(beta), eps, b, mb);
  CHECK(max_abs_diff(a.data, b.data) < tol);
  CHECK(max_abs_diff(ma.mean, mb.mean) < tol);
  CHECK(max_abs_diff(ma.var, mb.var) < tol * 10);

  auto mean = random_vec<T>(5, 43);
  auto var = random_vec<T>(5, 44, 2.0, 0.2);
  kernels::batch_norm_eval(in, std::span<const T>(gamma), std::span<const T>(beta), std::span<const T>(mean),
                           std::span<const T>(var), eps, a);
  reference::batch_norm_eval(in, std::span<const T>(gamma), std::span<const T>(beta), std::span<const T>(mean),
                             std::span<const T>(var), eps, b);
  CHECK(max_abs_diff(a.data, b.data) < tol);

  auto gout = random_map<T>(6, 5, 4, 4, 45);
  for (bool batch_stats : {true, false}) {
    const auto& m = batch_stats ? ma.mean : mean;
    const auto& v = batch_stats ? ma.var : var;
    std::vector<T> gg1(5, T(0)), gb1(5, T(0)), gg2(5, T(0)), gb2(5, T(0));
    FeatureMap<T> gi1, gi2;
    kernels::batch_norm_backward(in, std::span<const T>(gamma), std::span<const T>(m), std::span<const T>(v), eps,
                                 batch_stats, gout, std::span<T>(gg1), std::span<T>(gb1), gi1);
    reference::batch_norm_backward(in, std::span<const T>(gamma), std::span<const T>(m), std::span<const T>(v), eps,
                                   batch_stats, gout, std::span<T>(gg2), std::span<T>(gb2), gi2);
    CHECK(max_abs_diff(gg1, gg2) < tol * 10);
    CHECK(max_abs_diff(gb1, gb2) < tol * 10);
    CHECK(max_abs_diff(gi1.data, gi2.data) < tol * 10);
  }
}

TEST_CASE("batch norm training output has zero mean and unit variance per channel") {
  auto in = random_map<double>(4, 3, 5, 5, 50, 3.0);
  std::vector<double> gamma(3, 1.0), beta(3, 0.0);
  FeatureMap<double> out;
  BatchMoments<double> m;
  kernels::batch_norm_train(in, std::span<const double>(gamma), std::span<const double>(beta), 0.0, out, m);
  for (int c = 0; c < 3; ++c) {
    double s = 0, s2 = 0;
    const double n = 4.0 * 25;
    for (int f = 0; f < 4; ++f)
      for (std::size_t i = 0; i < out.plane(); ++i) {
        s += out.channel(f, c)[i];
        s2 += out.channel(f, c)[i] * out.channel(f, c)[i];
      }
    CHECK(std::abs(s / n) < 1e-12);
    CHECK(s2 / n == doctest::Approx(1.0).epsilon(1e-10));
  }
}

TEST_CASE_TEMPLATE("temporal shift matches reference and its adjoint", T, float, double) {
  const int time = 4;
  auto x = random_map<T>(2 * time, 8, 3, 3, 60);
  auto y = random_map<T>(2 * time, 8, 3, 3, 61);
  for (int fold : {0, 1, 2, 4}) {
    FeatureMap<T> a, b;
    kernels::temporal_shift(x, time, fold, false, a);
    reference::temporal_shift(x, time, fold, false, b);
    CHECK(max_abs_diff(a.data, b.data) == 0.0);

    FeatureMap<T> ry;
    kernels::temporal_shift(y, time, fold, true, ry);
    CHECK(dot(a, y) == doctest::Approx(dot(x, ry)).epsilon(1e-5));
  }
}

TEST_CASE("temporal shift moves channel slices by one frame with zero padding") {
  // 1 clip, 3 frames, 3 channels, 1x1 planes, fold 1; value = 10 * frame + channel.
  FeatureMap<double> x(3, 3, 1, 1);
  for (int f = 0; f < 3; ++f)
    for (int c = 0; c < 3; ++c) x.channel(f, c)[0] = 10 * f + c;
  FeatureMap<double> y;
  kernels::temporal_shift(x, 3, 1, false, y);
  // channel 0 reads frame t+1, channel 1 reads t-1, channel 2 is untouched.
  const std::vector<double> expect = {10, 0, 2, 20, 1, 12, 0, 11, 22};
  CHECK(max_abs_diff(y.data, expect) == 0.0);
}

TEST_CASE("temporal shift rejects a frame count not divisible by the clip length") {
  FeatureMap<float> x(5, 8, 2, 2), y;
  CHECK_THROWS_AS(kernels::temporal_shift(x, 4, 1, false, y), ShapeError);
}

TEST_CASE_TEMPLATE("relu and pooling match reference", T, float, double) {
  auto x = random_map<T>(6, 4, 3, 5, 70);
  auto a = x, b = x;
  kernels::relu_forward(a);
  reference::relu_forward(b);
  CHECK(max_abs_diff(a.data, b.data) == 0.0);

  auto g1 = random_map<T>(6, 4, 3, 5, 71);
  auto g2 = g1;
  kernels::relu_backward(a, g1);
  reference::relu_backward(b, g2);
  CHECK(max_abs_diff(g1.data, g2.data) == 0.0);

  Matrix<T> p1, p2;
  kernels::global_avg_pool(x, 3, p1);
  reference::global_avg_pool(x, 3, p2);
  REQUIRE(p1.rows == 2);
  REQUIRE(p1.cols == 4);
  CHECK(max_abs_diff(p1.data, p2.data) < 1e-6);

  FeatureMap<T> gi1, gi2;
  gi1.reshape_like(x);
  gi2.reshape_like(x);
  kernels::global_avg_pool_backward(p1, 3, gi1);
  reference::global_avg_pool_backward(p1, 3, gi2);
  CHECK(max_abs_diff(gi1.data, gi2.data) < 1e-7);
}
