// Serial reference kernels against the OpenMP/GEMM kernels on the shapes of
// the toy backbone (batch 8 clips x 8 frames).

#include <benchmark/benchmark.h>

#include <random>

#include "ffn/kernels.hpp"
#include "ffn/model.hpp"

namespace {

using ffn::ConvGeometry;
using ffn::FeatureMap;

FeatureMap<float> random_map(int f, int c, int h, int w) {
  FeatureMap<float> m(f, c, h, w);
  std::mt19937_64 rng(1);
  std::normal_distribution<float> d(0.0f, 1.0f);
  for (auto& v : m.data) v = d(rng);
  return m;
}

std::vector<float> random_vec(std::size_t n) {
  std::vector<float> v(n);
  std::mt19937_64 rng(2);
  std::normal_distribution<float> d(0.0f, 0.1f);
  for (auto& x : v) x = d(rng);
  return v;
}

// Second backbone block: 32 -> 64 channels, 3x3, on 8x8 maps.
constexpr int kFrames = 64, kIn = 32, kOut = 64, kSide = 8;

template <auto Conv>
void BM_conv(benchmark::State& state) {
  const ConvGeometry g{kIn, kOut, 3, 1, 1};
  const auto in = random_map(kFrames, kIn, kSide, kSide);
  const auto w = random_vec(g.weight_size());
  FeatureMap<float> out(kFrames, kOut, kSide, kSide);
  for (auto _ : state) {
    Conv(in, std::span<const float>(w), g, out);
    benchmark::DoNotOptimize(out.data.data());
  }
  state.SetItemsProcessed(state.iterations() * kFrames);
}

template <auto Depthwise>
void BM_depthwise(benchmark::State& state) {
  const auto in = random_map(kFrames, kOut, kSide, kSide);
  const auto k = random_vec(kOut * 9);
  FeatureMap<float> out(kFrames, kOut, kSide, kSide);
  for (auto _ : state) {
    Depthwise(in, std::span<const float>(k), 3, out);
    benchmark::DoNotOptimize(out.data.data());
  }
  state.SetItemsProcessed(state.iterations() * kFrames);
}

template <auto Norm>
void BM_batch_norm(benchmark::State& state) {
  const auto in = random_map(kFrames, kOut, kSide, kSide);
  const std::vector<float> gamma(kOut, 1.0f), beta(kOut, 0.0f);
  FeatureMap<float> out(kFrames, kOut, kSide, kSide);
  ffn::BatchMoments<float> m;
  for (auto _ : state) {
    Norm(in, std::span<const float>(gamma), std::span<const float>(beta), 1e-5f, out, m);
    benchmark::DoNotOptimize(out.data.data());
  }
  state.SetItemsProcessed(state.iterations() * kFrames);
}

template <auto Shift>
void BM_shift(benchmark::State& state) {
  const auto in = random_map(kFrames, kIn, kSide, kSide);
  FeatureMap<float> out(kFrames, kIn, kSide, kSide);
  for (auto _ : state) {
    Shift(in, 8, 4, false, out);
    benchmark::DoNotOptimize(out.data.data());
  }
  state.SetItemsProcessed(state.iterations() * kFrames);
}

void BM_toy_forward(benchmark::State& state) {
  const auto spec = ffn::BackboneSpec::toy();
  const auto model = ffn::Model<float>::ffn(spec, ffn::FrameBranchSet(std::vector<int>{4, 8, 16}), {}, 3);
  const int frames = static_cast<int>(state.range(0));
  ffn::VideoTensor<float> video(8, frames, 1, 32, 32);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  for (auto& v : video.frames.data) v = u(rng);
  for (auto _ : state) benchmark::DoNotOptimize(ffn::infer_any_frame(model, video).first.data.data());
  state.SetItemsProcessed(state.iterations() * 8 * frames);
}

BENCHMARK(BM_conv<ffn::reference::conv2d_forward<float>>)->Name("conv2d/reference");
BENCHMARK(BM_conv<ffn::kernels::conv2d_forward<float>>)->Name("conv2d/parallel");
BENCHMARK(BM_depthwise<ffn::reference::depthwise_forward<float>>)->Name("depthwise/reference");
BENCHMARK(BM_depthwise<ffn::kernels::depthwise_forward<float>>)->Name("depthwise/parallel");
BENCHMARK(BM_batch_norm<ffn::reference::batch_norm_train<float>>)->Name("batch_norm/reference");
BENCHMARK(BM_batch_norm<ffn::kernels::batch_norm_train<float>>)->Name("batch_norm/parallel");
BENCHMARK(BM_shift<ffn::reference::temporal_shift<float>>)->Name("shift/reference");
BENCHMARK(BM_shift<ffn::kernels::temporal_shift<float>>)->Name("shift/parallel");
BENCHMARK(BM_toy_forward)->Name("toy_forward")->Arg(4)->Arg(8)->Arg(16);

}  // namespace

BENCHMARK_MAIN();
