#pragma once

// Comparison methods, all built on the plain backbone (one normalization
// set, no alteration): separated training per frame count, mixed sampling,
// proportional sampling, fine-tuning and ensembling.

#include <random>
#include <vector>

#include "ffn/training.hpp"

namespace ffn {

/// Plain training of a base model at `frames` frames.
TrainResult train_single(const TrainConfig& config, const Dataset& data, int frames, const ProgressFn& progress = {});

/// One independent base model per count in config.frames.
std::vector<TrainResult> train_separated(const TrainConfig& config, const Dataset& data,
                                         const ProgressFn& progress = {});

/// lambda_mix * a + (1 - lambda_mix) * b, elementwise; labels are untouched.
template <typename T>
VideoTensor<T> mixup_blend(const VideoTensor<T>& a, const VideoTensor<T>& b, double lambda_mix);

/// Start of the consecutive `low`-frame window replaced inside a `high`-frame
/// view: uniform over 0..high-low.
int draw_window_start(std::mt19937_64& rng, int high, int low);

/// Base model at the largest count; with probability rho per iteration a
/// random window of the high-frame view is replaced by its blend with the
/// low-frame view of the same clip (lambda_mix ~ Beta(alpha, alpha)).
TrainResult train_mixed(const TrainConfig& config, const Dataset& data, const ProgressFn& progress = {});

/// Base model trained at the largest count with probability varrho per
/// iteration, else at the smallest.
TrainResult train_proportional(const TrainConfig& config, const Dataset& data, const ProgressFn& progress = {});

/// Continues training every weight of `source` at config.finetune_frames for
/// config.resolved_finetune_epochs() epochs at lr * finetune_lr_scale.
TrainResult finetune(const Model<float>& source, const TrainConfig& config, const Dataset& data,
                     const ProgressFn& progress = {});

/// Mean of the members' softmax outputs; views[i] feeds models[i].
Matrix<float> ensemble_predict(const std::vector<const Model<float>*>& models,
                               const std::vector<VideoTensor<float>>& views);

/// Same, sampling each clip at every member's own (largest) frame count.
Matrix<float> ensemble_predict(const std::vector<const Model<float>*>& models, const Dataset& data,
                               const std::vector<Clip>& split, std::span<const int> indices);

}  // namespace ffn
