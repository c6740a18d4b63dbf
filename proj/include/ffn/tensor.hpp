#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ffn {

/// Thrown when array shapes disagree with what an operation requires.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Stack of per-frame feature maps laid out (frames, channels, height, width).
/// `frames` counts every frame of every clip in a batch, i.e. batch * time.
template <typename T>
struct FeatureMap {
  int frames = 0;
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<T> data;

  FeatureMap() = default;
  FeatureMap(int f, int c, int h, int w)
      : frames(f), channels(c), height(h), width(w),
        data(static_cast<std::size_t>(f) * c * h * w, T(0)) {}

  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
  std::size_t frame_size() const { return plane() * channels; }
  std::size_t size() const { return data.size(); }

  T* frame(int f) { return data.data() + f * frame_size(); }
  const T* frame(int f) const { return data.data() + f * frame_size(); }
  T* channel(int f, int c) { return frame(f) + c * plane(); }
  const T* channel(int f, int c) const { return frame(f) + c * plane(); }

  bool same_shape(const FeatureMap& o) const {
    return frames == o.frames && channels == o.channels && height == o.height &&
           width == o.width;
  }
  void reshape_like(const FeatureMap& o) {
    frames = o.frames;
    channels = o.channels;
    height = o.height;
    width = o.width;
    data.assign(o.size(), T(0));
  }
};

/// Clip batch shaped (batch, time, channels, height, width). Pixel values of
/// model inputs are normalized to [-1, 1].
template <typename T>
struct VideoTensor {
  int batch = 0;
  int frame_count = 0;
  FeatureMap<T> frames;  // frames.frames == batch * frame_count

  VideoTensor() = default;
  VideoTensor(int b, int t, int c, int h, int w)
      : batch(b), frame_count(t), frames(b * t, c, h, w) {}

  int channels() const { return frames.channels; }
  int height() const { return frames.height; }
  int width() const { return frames.width; }
  T* clip(int b) { return frames.frame(b * frame_count); }
  const T* clip(int b) const { return frames.frame(b * frame_count); }
};

/// Dense row-major matrix; used for logits, pooled features and probabilities.
template <typename T>
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<T> data;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, T(0)) {}

  T& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  T operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
  std::span<T> row(int r) { return {data.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)}; }
  std::span<const T> row(int r) const {
    return {data.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)};
  }
};

}  // namespace ffn
