#include "ffn/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace ffn {

namespace {

// Draws per batch: the views to train on (a single view for base models).
using BatchPolicy = std::function<VideoTensor<float>(std::span<const int> indices, std::mt19937_64& sample_rng,
                                                     std::mt19937_64& mix_rng)>;

std::vector<int> labels_of(const std::vector<Clip>& split, std::span<const int> idx) {
  std::vector<int> out;
  for (int i : idx) out.push_back(split[i].label);
  return out;
}

Model<float> base_from(const Checkpoint& ckpt, int frames) {
  Checkpoint c = ckpt;
  c.metadata["kind"] = "base";
  c.metadata["frame_counts"] = std::vector<int>{frames};
  return Model<float>::from_checkpoint(c);
}

std::vector<MetricsRow> eval_rows(const Model<float>& model, const Dataset& data, const std::vector<int>& frames,
                                  int epoch) {
  std::vector<MetricsRow> rows;
  for (int f : frames) {
    const auto r = evaluate(model, data, data.val, f);
    rows.push_back({epoch, "val", f, r.loss_ce, 0.0, r.loss_ce, r.top1});
  }
  return rows;
}

// Main stream: data order and frame sampling. Mix stream: every extra
// random decision a baseline makes, so degenerate settings replay plain
// training exactly.
TrainResult run_base_training(Model<float> model, const TrainConfig& config, const Dataset& data, int epochs,
                              double lr, const BatchPolicy& policy, const ProgressFn& progress) {
  if (data.train.empty()) throw std::invalid_argument("training split is empty");
  TrainResult result{std::move(model), {}};
  SgdOptimizer<float> optimizer(result.model, config.momentum, config.weight_decay);
  std::mt19937_64 rng(config.seed ^ 0x5DEECE66Dull);
  std::mt19937_64 mix_rng(config.seed ^ 0xB5AD4ECEDA1CE2A9ull);
  const StepOptions options{0.0, true, NormMode::train};

  const int n = static_cast<int>(data.train.size());
  const long steps_per_epoch = (n + config.batch_size - 1) / config.batch_size;
  const long total_steps = steps_per_epoch * epochs;
  const long warmup = std::lround(config.warmup_epochs * steps_per_epoch);
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  long step = 0;

  for (int epoch = 1; epoch <= epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    std::map<int, BranchStepStats> sum;  // by frame count
    std::vector<BranchStepStats> stats;
    for (int start = 0; start < n; start += config.batch_size) {
      const std::span<const int> idx(order.data() + start, std::min(config.batch_size, n - start));
      const auto labels = labels_of(data.train, idx);
      std::vector<VideoTensor<float>> views{policy(idx, rng, mix_rng)};
      train_step(result.model, views, std::span<const int>(labels), options, optimizer,
                 scheduled_lr(lr, step, total_steps, warmup), step, &stats);
      ++step;
      auto& s = sum[views[0].frame_count];
      s.ce += stats[0].ce * stats[0].count;
      s.correct += stats[0].correct;
      s.count += stats[0].count;
    }
    for (const auto& [frames, s] : sum) {
      const double c = std::max(1, s.count);
      result.metrics.push_back({epoch, "train", frames, s.ce / c, 0.0, s.ce / c, 100.0 * s.correct / c});
    }
    const auto val = eval_rows(result.model, data, config.eval_frames, epoch);
    result.metrics.insert(result.metrics.end(), val.begin(), val.end());
    if (progress) {
      std::string line = "epoch " + std::to_string(epoch) + "/" + std::to_string(epochs) + " val top1";
      for (const auto& r : val) line += " " + std::to_string(r.branch_frames) + "F=" + std::to_string(r.top1);
      progress(line);
    }
  }
  return result;
}

BatchPolicy plain_policy(const Dataset& data, int frames) {
  return [&data, frames](std::span<const int> idx, std::mt19937_64& rng, std::mt19937_64&) {
    return make_batch<float>(data, data.train, idx, frames, SampleVariant::train, &rng);
  };
}

double draw_beta(std::mt19937_64& rng, double alpha) {
  std::gamma_distribution<double> g(alpha, 1.0);
  const double x = g(rng), y = g(rng);
  return x + y > 0 ? x / (x + y) : 0.5;
}

}  // namespace

TrainResult train_single(const TrainConfig& config, const Dataset& data, int frames, const ProgressFn& progress) {
  config.validate();
  const Checkpoint init = initial_checkpoint(config, data);
  return run_base_training(base_from(init, frames), config, data, config.epochs, config.lr, plain_policy(data, frames),
                           progress);
}

std::vector<TrainResult> train_separated(const TrainConfig& config, const Dataset& data, const ProgressFn& progress) {
  std::vector<TrainResult> out;
  for (int f : config.frames) {
    if (progress) progress("separated training at " + std::to_string(f) + " frames");
    out.push_back(train_single(config, data, f, progress));
  }
  return out;
}

template <typename T>
VideoTensor<T> mixup_blend(const VideoTensor<T>& a, const VideoTensor<T>& b, double lambda_mix) {
  if (a.batch != b.batch || a.frame_count != b.frame_count || !a.frames.same_shape(b.frames)) {
    throw ShapeError("mixup_blend: clips differ in shape");
  }
  VideoTensor<T> out = a;
  for (std::size_t i = 0; i < out.frames.data.size(); ++i) {
    out.frames.data[i] = static_cast<T>(lambda_mix * a.frames.data[i] + (1.0 - lambda_mix) * b.frames.data[i]);
  }
  return out;
}

int draw_window_start(std::mt19937_64& rng, int high, int low) {
  if (low > high) throw std::invalid_argument("window longer than the clip");
  std::uniform_int_distribution<int> d(0, high - low);
  return d(rng);
}

TrainResult train_mixed(const TrainConfig& config, const Dataset& data, const ProgressFn& progress) {
  config.validate();
  const int high = config.frames.back(), low = config.frames.front();
  const Checkpoint init = initial_checkpoint(config, data);
  BatchPolicy policy = [&](std::span<const int> idx, std::mt19937_64& rng, std::mt19937_64& mix) {
    auto view = make_batch<float>(data, data.train, idx, high, SampleVariant::train, &rng);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    if (!(u(mix) < config.rho)) return view;
    const double lambda_mix = draw_beta(mix, config.mix_alpha);
    const auto low_view = make_batch<float>(data, data.train, idx, low, SampleVariant::train, &mix);
    const std::size_t fsize = view.frames.frame_size();
    for (int b = 0; b < view.batch; ++b) {
      const int s = draw_window_start(mix, high, low);
      VideoTensor<float> a(1, low, view.channels(), view.height(), view.width());
      VideoTensor<float> w(1, low, view.channels(), view.height(), view.width());
      std::copy_n(low_view.clip(b), low * fsize, a.clip(0));
      std::copy_n(view.clip(b) + s * fsize, low * fsize, w.clip(0));
      const auto blended = mixup_blend(a, w, lambda_mix);
      std::copy_n(blended.clip(0), low * fsize, view.clip(b) + s * fsize);
    }
    return view;
  };
  return run_base_training(base_from(init, high), config, data, config.epochs, config.lr, policy, progress);
}

TrainResult train_proportional(const TrainConfig& config, const Dataset& data, const ProgressFn& progress) {
  config.validate();
  const int high = config.frames.back(), low = config.frames.front();
  const Checkpoint init = initial_checkpoint(config, data);
  BatchPolicy policy = [&](std::span<const int> idx, std::mt19937_64& rng, std::mt19937_64& mix) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const int frames = u(mix) < config.varrho ? high : low;
    return make_batch<float>(data, data.train, idx, frames, SampleVariant::train, &rng);
  };
  return run_base_training(base_from(init, high), config, data, config.epochs, config.lr, policy, progress);
}

TrainResult finetune(const Model<float>& source, const TrainConfig& config, const Dataset& data,
                     const ProgressFn& progress) {
  config.validate();
  if (source.kind() != ModelKind::base) throw std::invalid_argument("finetune expects a base model");
  const int frames = config.finetune_frames;
  Model<float> start = base_from(source.to_checkpoint(), frames);
  const int epochs = config.resolved_finetune_epochs();
  if (epochs == 0) return {std::move(start), {}};
  return run_base_training(std::move(start), config, data, epochs, config.lr * config.finetune_lr_scale,
                           plain_policy(data, frames), progress);
}

Matrix<float> ensemble_predict(const std::vector<const Model<float>*>& models,
                               const std::vector<VideoTensor<float>>& views) {
  if (models.empty() || models.size() != views.size()) throw std::invalid_argument("ensemble needs one view per model");
  std::vector<Matrix<float>> probs;
  for (std::size_t i = 0; i < models.size(); ++i) {
    probs.push_back(softmax(infer_any_frame(*models[i], views[i]).first));
    if (probs[i].rows != probs[0].rows || probs[i].cols != probs[0].cols) {
      throw ShapeError("ensemble members disagree on shape");
    }
  }
  // Members are summed in sorted order so the mean is invariant to model order.
  Matrix<float> mean(probs[0].rows, probs[0].cols);
  std::vector<float> column(models.size());
  for (std::size_t j = 0; j < mean.data.size(); ++j) {
    for (std::size_t i = 0; i < probs.size(); ++i) column[i] = probs[i].data[j];
    std::sort(column.begin(), column.end());
    double s = 0;
    for (float v : column) s += v;
    mean.data[j] = static_cast<float>(s / static_cast<double>(models.size()));
  }
  return mean;
}

Matrix<float> ensemble_predict(const std::vector<const Model<float>*>& models, const Dataset& data,
                               const std::vector<Clip>& split, std::span<const int> indices) {
  std::vector<VideoTensor<float>> views;
  for (const auto* m : models) {
    views.push_back(make_batch<float>(data, split, indices, m->branches().max_frames(), SampleVariant::eval, nullptr));
  }
  return ensemble_predict(models, views);
}

template VideoTensor<float> mixup_blend(const VideoTensor<float>&, const VideoTensor<float>&, double);
template VideoTensor<double> mixup_blend(const VideoTensor<double>&, const VideoTensor<double>&, double);

}  // namespace ffn
