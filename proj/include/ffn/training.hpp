#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "ffn/data.hpp"
#include "ffn/losses.hpp"
#include "ffn/model.hpp"
#include "json.hpp"

namespace ffn {

/// Every knob of a training or evaluation run. Serialized as a flat JSON
/// object whose keys are the field names below; unknown keys are rejected.
struct TrainConfig {
  std::string method = "ffn";  // ffn | st | mixed | proportional | finetune
  std::vector<int> frames = {4, 8, 16};
  int epochs = 8;
  int batch_size = 16;
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double warmup_epochs = 0.5;
  std::uint64_t seed = 0;

  double lambda = 1.0;
  bool distill = true;  // false: cross-entropy on every branch
  bool weight_alteration = true;
  bool private_norm = true;

  double rho = 0.5;     // mixed: probability of blending a low-frame window
  double varrho = 0.5;  // proportional: probability of a high-frame iteration
  double mix_alpha = 1.0;
  int finetune_frames = 4;
  int finetune_epochs = -1;  // -1: 20% of `epochs`, rounded, at least 1
  double finetune_lr_scale = 0.1;
  std::string source_checkpoint;  // finetune input

  std::vector<int> eval_frames = {4, 8, 16};

  int num_classes = 8;
  int samples_per_class = 500;
  std::uint64_t data_seed = 0;
  double slow_speed = 1.0;
  double fast_speed = 1.5;
  double noise_sigma = 0.1;
  std::string data_dir;    // frame-folder tree; empty: synthetic data
  std::string data_cache;  // empty: <out_dir>/dataset.ffnd

  std::string init_checkpoint;  // base-model weights to start from
  std::string out_dir = "runs/default";

  void validate() const;
  SyntheticConfig synthetic() const;
  int resolved_finetune_epochs() const;
};

nlohmann::json config_to_json(const TrainConfig& c);
/// Applies the keys of `j` on top of `base`.
TrainConfig config_from_json(const nlohmann::json& j, TrainConfig base = {});
TrainConfig load_config(const std::filesystem::path& path);

/// Non-finite loss during optimization.
class TrainingFault : public std::runtime_error {
 public:
  TrainingFault(long step, const std::string& what)
      : std::runtime_error("training fault at step " + std::to_string(step) + ": " + what), step_(step) {}
  long step() const { return step_; }

 private:
  long step_;
};

// ---------------------------------------------------------------- optimizer

/// SGD with momentum (PyTorch convention: v = mu v + g + wd w; w -= lr v).
/// Weight decay applies to convolution, alteration and classifier weights,
/// not to normalization parameters or biases.
template <typename T>
class SgdOptimizer {
 public:
  SgdOptimizer(const Model<T>& model, double momentum, double weight_decay);
  void step(Model<T>& model, const Gradients<T>& grads, double lr);

 private:
  double momentum_, weight_decay_;
  std::vector<std::vector<T>> velocity_;
  std::vector<bool> decay_;
};

/// Linear warmup then cosine decay to zero over `total_steps`.
double scheduled_lr(double base_lr, long step, long total_steps, long warmup_steps);

// ---------------------------------------------------------------- steps

struct BranchStepStats {
  double ce = 0.0;
  double kl = 0.0;
  double objective = 0.0;  // this branch's contribution to the total
  int correct = 0;
  int count = 0;
};

struct StepOptions {
  double lambda = 1.0;
  bool distill = true;
  NormMode mode = NormMode::train;
};

/// Forward/backward of the multi-frequency objective on one batch whose k
/// views (one per branch, all sampled from the same clips) are given in
/// branch order. Gradients accumulate into `grads`. The teacher runs first;
/// its softmax is a constant inside the distillation term.
template <typename T>
LossBundle accumulate_gradients(Model<T>& model, const std::vector<VideoTensor<T>>& views,
                                std::span<const int> labels, const StepOptions& options, Gradients<T>& grads,
                                std::vector<BranchStepStats>* stats = nullptr);

/// accumulate_gradients + one optimizer step. Throws TrainingFault tagged
/// with `step_index` when the loss is not finite (parameters untouched).
template <typename T>
LossBundle train_step(Model<T>& model, const std::vector<VideoTensor<T>>& views, std::span<const int> labels,
                      const StepOptions& options, SgdOptimizer<T>& optimizer, double lr, long step_index,
                      std::vector<BranchStepStats>* stats = nullptr);

/// The k views of a batch: clip i sampled at each branch's frame count.
template <typename T>
std::vector<VideoTensor<T>> make_views(const Dataset& data, const std::vector<Clip>& split,
                                       std::span<const int> indices, const FrameBranchSet& branches,
                                       SampleVariant variant, std::mt19937_64* rng);

// ---------------------------------------------------------------- eval

struct EvalResult {
  int frames = 0;
  int branch = 0;  // branch used (routed for frame-flexible models)
  double top1 = 0.0;  // percent
  double loss_ce = 0.0;
};

/// Top-1 on `split` with every clip sampled at `frames` (centre sampling).
/// Frame-flexible models route through infer_any_frame.
EvalResult evaluate(const Model<float>& model, const Dataset& data, const std::vector<Clip>& split, int frames,
                    int batch_size = 32);

/// Softmax outputs, rows in split order.
Matrix<float> predict_probs(const Model<float>& model, const Dataset& data, const std::vector<Clip>& split,
                            int frames, int batch_size = 32);

// ---------------------------------------------------------------- metrics

struct MetricsRow {
  int epoch = 0;
  std::string split;
  int branch_frames = 0;
  double loss_ce = 0.0, loss_kl = 0.0, loss_total = 0.0, top1 = 0.0;
};

inline constexpr const char* kMetricsHeader = "epoch,split,branch_frames,loss_ce,loss_kl,loss_total,top1";
std::string format_metrics(const std::vector<MetricsRow>& rows);
void write_metrics_csv(const std::vector<MetricsRow>& rows, const std::filesystem::path& path);

/// Per-branch validation rows for a frame-flexible model: CE of each branch,
/// KL(teacher || branch) (0 for the teacher), total = ce + lambda * kl.
std::vector<MetricsRow> evaluate_branches(const Model<float>& model, const Dataset& data, int epoch,
                                          double lambda);

// ---------------------------------------------------------------- runs

using ProgressFn = std::function<void(const std::string&)>;

struct TrainResult {
  Model<float> model;
  std::vector<MetricsRow> metrics;
};

/// Backbone used by every run on `data`.
BackboneSpec backbone_for(const Dataset& data);

/// Starting weights: the checkpoint at `init_checkpoint` when set, otherwise a
/// base model seeded from `seed`.
Checkpoint initial_checkpoint(const TrainConfig& config, const Dataset& data);

/// Trains a frame-flexible model on config.frames (k >= 2).
TrainResult train_ffn(const TrainConfig& config, const Dataset& data, const ProgressFn& progress = {});

/// Loads or generates the dataset named by the config.
Dataset dataset_for(const TrainConfig& config, bool regenerate);

}  // namespace ffn
