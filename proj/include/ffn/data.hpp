#pragma once

// Synthetic moving-sprite videos and frame-folder ingestion.
//
// A synthetic clip shows one sprite drifting at constant velocity over a
// noisy background on a 32x32 torus (positions wrap). Start positions are
// uniform on the torus and sprite shape/brightness are drawn independently
// of the class, so any single frame has the same distribution for every
// class: only motion (direction and speed) identifies the label.
//
// Class c maps to direction c / 2 and speed tier c % 2 (0 slow, 1 fast).
// Directions in order: right, left, down, up, down-right, up-left,
// down-left, up-right. K = 8 covers the four axis directions.
//
// Pixels are stored as uint8 in [0, 255]; model inputs are p / 127.5 - 1,
// i.e. in [-1, 1].

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "ffn/tensor.hpp"
#include "json.hpp"

namespace ffn {

struct SyntheticConfig {
  int num_classes = 8;
  int samples_per_class = 500;
  std::uint64_t seed = 0;
  int frames = 32;
  int channels = 1;
  int size = 32;               // frames are size x size
  double slow_speed = 1.0;     // pixels per frame
  double fast_speed = 1.5;
  double noise_sigma = 0.1;    // background noise, intensity units in [0, 1]
  double train_fraction = 0.8;

  void validate() const;
  bool operator==(const SyntheticConfig&) const = default;
};

void to_json(nlohmann::json& j, const SyntheticConfig& c);
void from_json(const nlohmann::json& j, SyntheticConfig& c);

struct MotionParams {
  int direction = 0;
  int speed_tier = 0;
  double speed = 0.0;
  double start_x = 0.0, start_y = 0.0;
  int sprite_kind = 0;  // 0 disk, 1 square, 2 diamond
  double intensity = 1.0;
};

struct Clip {
  int frame_count = 0;
  int label = 0;
  MotionParams motion;              // meaningful for synthetic clips only
  std::vector<std::uint8_t> pixels;  // (frame, channel, y, x)
};

struct Dataset {
  int channels = 1;
  int height = 32;
  int width = 32;
  int num_classes = 0;
  std::vector<std::string> class_names;
  std::vector<Clip> train;
  std::vector<Clip> val;
  nlohmann::json origin;  // generator config or source directory
};

/// Class index for a (direction, speed tier) pair; inverse of the mapping above.
int class_label(int direction, int speed_tier);
std::string class_name(int label);

/// Renders one clip from explicit motion parameters. `noise_seed` drives the
/// background noise only.
Clip render_clip(const MotionParams& motion, int label, const SyntheticConfig& config, std::uint64_t noise_seed);

/// Deterministic given the config: per-sample generators are derived from
/// (seed, sample index), so generation parallelizes without changing output.
/// The first round(train_fraction * samples_per_class) clips of each class go
/// to the training split.
Dataset generate_synthetic_dataset(const SyntheticConfig& config);

/// Single-file archive: magic, JSON index, raw uint8 frames.
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

/// Loads `cache` when it exists and was generated from the same config,
/// otherwise generates and writes it.
Dataset load_or_generate(const SyntheticConfig& config, const std::filesystem::path& cache, bool regenerate);

/// FNV-1a over labels and pixels of both splits.
std::string dataset_digest(const Dataset& dataset);

/// One directory of image files, sorted lexicographically, each converted to
/// `channels` channels and resized to size x size.
Clip load_clip_folder(const std::filesystem::path& dir, int channels = 1, int size = 32);
VideoTensor<float> load_frame_folder(const std::filesystem::path& dir, int channels = 1, int size = 32);

/// Labeled clips from root/<class>/<clip>/<frames>, classes sorted by name.
/// When root has "train" and "val" subdirectories each is read as a split of
/// that layout; otherwise every clip lands in the validation split.
Dataset load_frame_tree(const std::filesystem::path& root, int channels = 1, int size = 32);

// ---------------------------------------------------------------- sampling

enum class SampleVariant { eval, train };

/// Splits [0, total) into t equal segments. eval: the centre index
/// floor((2i + 1) * total / (2t)) of each; train: a uniform index within
/// each segment, falling back to the centre when a segment is empty
/// (t > total, which repeats frames). Indices are nondecreasing.
std::vector<int> uniform_sample(int total, int t, SampleVariant variant, std::mt19937_64* rng = nullptr);

inline float pixel_to_input(std::uint8_t p) { return static_cast<float>(p) / 127.5f - 1.0f; }

/// Stacks the listed frames of one clip into batch slot `slot` of `out`.
template <typename T>
void write_clip_frames(const Clip& clip, std::span<const int> frames, int channels, int height, int width,
                       VideoTensor<T>& out, int slot);

/// Batch of clips sampled at `t` frames each.
template <typename T>
VideoTensor<T> make_batch(const Dataset& data, const std::vector<Clip>& split, std::span<const int> indices, int t,
                          SampleVariant variant, std::mt19937_64* rng);

}  // namespace ffn
