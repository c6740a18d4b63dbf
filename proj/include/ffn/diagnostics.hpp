#pragma once

// Analysis of frame-count deviation: accuracy sweeps over evaluation frame
// counts, normalization-statistic snapshots and distances, and the
// shifted-statistics simulation.
//
// Per-layer statistics are reduced over channels by a plain mean; "the last
// stage" of the backbone is its last block.

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ffn/data.hpp"
#include "ffn/model.hpp"

namespace ffn {

struct NormStats {
  std::string source;
  std::vector<std::string> layers;
  std::vector<std::vector<float>> mu, var, gamma, beta;  // [layer][channel]
};

/// Stored running statistics and affine parameters of every normalization
/// layer, for the branch's normalization set.
NormStats extract_norm_stats(const Model<float>& model, int branch = 0, std::string source = "");

/// Rows `layer,channel,mu,var,gamma,beta,source`.
void write_normstats_csv(const std::vector<NormStats>& stats, const std::filesystem::path& path);

/// Per-layer mean absolute difference over channels, per component, and the
/// mean of those over layers.
struct StatsDistance {
  std::vector<std::string> layers;
  std::vector<double> mu, var, gamma, beta;
  double aggregate_mu = 0, aggregate_var = 0, aggregate_gamma = 0, aggregate_beta = 0;
  double aggregate = 0;  // sum of the four component aggregates
};

StatsDistance compare_stats(const NormStats& a, const NormStats& b);
void write_compare_csv(const StatsDistance& d, const std::filesystem::path& path);

struct DeviationRow {
  int train_frames = 0;  // for frame-flexible models: frames of the routed branch
  int eval_frames = 0;
  double top1 = 0.0;
  double drop = 0.0;  // matched-frame top1 minus this row's top1
  bool outbound = false;  // outside the trained frame range
};

struct DeviationReport {
  std::vector<DeviationRow> rows;
  const DeviationRow* find(int eval_frames) const;
};

/// Evaluates the model on the validation split at each frame count (routing
/// for frame-flexible models) and relates every row to the accuracy at the
/// frame count the executing weights were trained for.
DeviationReport deviation_sweep(const Model<float>& model, const Dataset& data, std::span<const int> eval_frames);
void write_deviation_csv(const std::vector<DeviationReport>& reports, const std::filesystem::path& path);

struct NearbyRow {
  int train_frames = 0;
  int near_frames = 0, far_frames = 0;
  double drop_near = 0.0, drop_far = 0.0;
  bool holds = false;  // drop_near <= drop_far + tolerance
};

/// For every (near, far) pair of evaluated counts on the same side of the
/// training count with |near - c| < |far - c|.
std::vector<NearbyRow> nearby_alleviation_report(const DeviationReport& report, double tolerance = 1.0);
void write_nearby_csv(const std::vector<NearbyRow>& rows, const std::filesystem::path& path);

enum class ShiftMode { cross, native };

/// Top-1 of a base model on `eval_frames`-frame validation clips. cross: the
/// stored statistics (collected at the training frame count). native: a copy
/// whose running statistics are re-estimated on `eval_frames`-frame training
/// clips first; learned weights are never modified.
double simulate_shifted_norm(const Model<float>& model, const Dataset& data, int eval_frames, ShiftMode mode);

/// Running statistics re-estimated on the training split at `frames` frames.
Model<float> recalibrate_norm(const Model<float>& model, const Dataset& data, int frames, int batch_size = 32);

/// Static multiply-accumulate estimate (in GFLOPs, 2 per MAC) of one clip.
double estimate_gflops(const BackboneSpec& spec, int frames, bool alteration);

/// Line plot of named series over a shared integer x axis, written as PNG.
struct PlotSeries {
  std::string name;
  std::vector<double> x, y;
};
void write_line_plot(const std::vector<PlotSeries>& series, const std::string& title, const std::string& x_label,
                     const std::string& y_label, const std::filesystem::path& path);

}  // namespace ffn
