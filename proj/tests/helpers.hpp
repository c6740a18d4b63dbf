#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "ffn/model.hpp"
#include "ffn/tensor.hpp"

namespace ffn::test {

template <typename T>
FeatureMap<T> random_map(int f, int c, int h, int w, std::uint64_t seed, double scale = 1.0) {
  FeatureMap<T> m(f, c, h, w);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, scale);
  for (auto& v : m.data) v = static_cast<T>(d(rng));
  return m;
}

template <typename T>
std::vector<T> random_vec(std::size_t n, std::uint64_t seed, double mean = 0.0, double scale = 1.0) {
  std::vector<T> v(n);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(mean, scale);
  for (auto& x : v) x = static_cast<T>(d(rng));
  return v;
}

template <typename T>
VideoTensor<T> random_video(int batch, int time, const BackboneSpec& spec, std::uint64_t seed) {
  VideoTensor<T> v(batch, time, spec.in_channels, spec.height, spec.width);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  for (auto& x : v.frames.data) x = static_cast<T>(d(rng));
  return v;
}

template <typename A, typename B>
double max_abs_diff(const A& a, const B& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

/// Small backbone used where the reference toy network would be too slow.
inline BackboneSpec micro_spec(int blocks = 2, int num_classes = 3) {
  BackboneSpec s;
  s.in_channels = 8;
  s.height = 6;
  s.width = 6;
  s.num_classes = num_classes;
  const int widths[] = {8, 16, 16};
  for (int i = 0; i < blocks; ++i) s.blocks.push_back({widths[i], 3, i == 0 ? 1 : 2, 1});
  return s;
}

}  // namespace ffn::test
