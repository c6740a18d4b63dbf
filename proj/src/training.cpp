#include "ffn/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <set>

namespace ffn {

// ---------------------------------------------------------------- config

#define FFN_CONFIG_FIELDS(X)                                                                                \
  X(method) X(frames) X(epochs) X(batch_size) X(lr) X(momentum) X(weight_decay) X(warmup_epochs) X(seed)   \
  X(lambda) X(distill) X(weight_alteration) X(private_norm) X(rho) X(varrho) X(mix_alpha)                 \
  X(finetune_frames) X(finetune_epochs) X(finetune_lr_scale) X(source_checkpoint) X(eval_frames)          \
  X(num_classes) X(samples_per_class) X(data_seed) X(slow_speed) X(fast_speed) X(noise_sigma) X(data_dir) \
  X(data_cache) X(init_checkpoint) X(out_dir)

nlohmann::json config_to_json(const TrainConfig& c) {
  nlohmann::json j;
#define X(f) j[#f] = c.f;
  FFN_CONFIG_FIELDS(X)
#undef X
  return j;
}

TrainConfig config_from_json(const nlohmann::json& j, TrainConfig c) {
  if (!j.is_object()) throw std::invalid_argument("config must be a JSON object");
  const auto known = config_to_json(TrainConfig{});
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw std::invalid_argument("unknown config key: " + key);
  }
  try {
#define X(f) \
  if (j.contains(#f)) j.at(#f).get_to(c.f);
    FFN_CONFIG_FIELDS(X)
#undef X
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("bad config value: ") + e.what());
  }
  return c;
}

#undef FFN_CONFIG_FIELDS

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path.string());
  try {
    return config_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument("cannot parse config " + path.string() + ": " + e.what());
  }
}

void TrainConfig::validate() const {
  static const std::set<std::string> methods = {"ffn", "st", "mixed", "proportional", "finetune"};
  if (!methods.count(method)) throw std::invalid_argument("unknown method: " + method);
  FrameBranchSet check(frames);
  if (epochs < 0 || batch_size < 1) throw std::invalid_argument("epochs must be >= 0 and batch_size >= 1");
  if (!(lr > 0) || momentum < 0 || momentum >= 1 || weight_decay < 0 || warmup_epochs < 0) {
    throw std::invalid_argument("bad optimizer settings");
  }
  if (lambda < 0) throw std::invalid_argument("lambda must be non-negative");
  if (rho < 0 || rho > 1 || varrho < 0 || varrho > 1) throw std::invalid_argument("rho and varrho must lie in [0, 1]");
  if (!(mix_alpha > 0)) throw std::invalid_argument("mix_alpha must be positive");
  if (finetune_frames < 1 || finetune_epochs < -1 || !(finetune_lr_scale > 0)) {
    throw std::invalid_argument("bad finetune settings");
  }
  for (int f : eval_frames)
    if (f < 1) throw std::invalid_argument("eval frames must be positive");
  if (data_dir.empty()) synthetic().validate();
}

SyntheticConfig TrainConfig::synthetic() const {
  SyntheticConfig s;
  s.num_classes = num_classes;
  s.samples_per_class = samples_per_class;
  s.seed = data_seed;
  s.slow_speed = slow_speed;
  s.fast_speed = fast_speed;
  s.noise_sigma = noise_sigma;
  return s;
}

int TrainConfig::resolved_finetune_epochs() const {
  if (finetune_epochs >= 0) return finetune_epochs;
  return std::max(1, static_cast<int>(std::lround(0.2 * epochs)));
}

// ---------------------------------------------------------------- optimizer

template <typename T>
SgdOptimizer<T>::SgdOptimizer(const Model<T>& model, double momentum, double weight_decay)
    : momentum_(momentum), weight_decay_(weight_decay) {
  for (const auto& a : model.arrays()) {
    velocity_.emplace_back(a.trainable ? a.values.size() : 0, T(0));
    decay_.push_back(a.name.ends_with(".W") || a.name.ends_with(".phi"));
  }
}

template <typename T>
void SgdOptimizer<T>::step(Model<T>& model, const Gradients<T>& grads, double lr) {
  auto& arrays = model.arrays();
  for (std::size_t i = 0; i < arrays.size(); ++i) {
    if (!arrays[i].trainable) continue;
    auto& w = arrays[i].values;
    auto& v = velocity_[i];
    const auto& g = grads.values[i];
    const double wd = decay_[i] ? weight_decay_ : 0.0;
    for (std::size_t j = 0; j < w.size(); ++j) {
      v[j] = static_cast<T>(momentum_ * v[j] + g[j] + wd * w[j]);
      w[j] = static_cast<T>(w[j] - lr * v[j]);
    }
  }
}

double scheduled_lr(double base_lr, long step, long total_steps, long warmup_steps) {
  if (step < warmup_steps) return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
  const long span = std::max(1L, total_steps - warmup_steps);
  const double progress = std::clamp(static_cast<double>(step - warmup_steps) / span, 0.0, 1.0);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

// ---------------------------------------------------------------- steps

namespace {

template <typename T>
int count_correct(const Matrix<T>& logits, std::span<const int> labels) {
  int correct = 0;
  for (int n = 0; n < logits.rows; ++n) {
    const auto row = logits.row(n);
    const int pred = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    correct += pred == labels[n];
  }
  return correct;
}

template <typename T>
void scale(Matrix<T>& m, double s) {
  for (auto& v : m.data) v = static_cast<T>(v * s);
}

}  // namespace

template <typename T>
LossBundle accumulate_gradients(Model<T>& model, const std::vector<VideoTensor<T>>& views,
                                std::span<const int> labels, const StepOptions& options, Gradients<T>& grads,
                                std::vector<BranchStepStats>* stats) {
  const int k = model.num_branches();
  if (static_cast<int>(views.size()) != k) throw std::invalid_argument("need one view per branch");
  const int teacher = k - 1;
  if (stats != nullptr) stats->assign(k, {});
  LossBundle bundle;
  bundle.lambda = options.distill ? options.lambda : 0.0;

  ForwardCache<T> cache;
  const Matrix<T> teacher_logits = model.forward_branch(views[teacher], teacher, options.mode, &cache);
  const auto ce = cross_entropy(teacher_logits, labels);
  model.backward(cache, ce.grad, grads);
  bundle.ce = ce.value;
  if (stats != nullptr) {
    (*stats)[teacher] = {ce.value, 0.0, ce.value, count_correct(teacher_logits, labels), teacher_logits.rows};
  }
  const Matrix<T> teacher_probs = softmax(teacher_logits);

  for (int s = 0; s < teacher; ++s) {
    const Matrix<T> logits = model.forward_branch(views[s], s, options.mode, &cache);
    auto kl = distillation_kl(teacher_probs, logits);
    auto ce_s = cross_entropy(logits, labels);
    double objective;
    if (options.distill) {
      bundle.kl += kl.value;
      objective = options.lambda * kl.value;
      if (options.lambda != 0.0) {
        scale(kl.grad, options.lambda);
        model.backward(cache, kl.grad, grads);
      }
    } else {
      bundle.ce += ce_s.value;
      objective = ce_s.value;
      model.backward(cache, ce_s.grad, grads);
    }
    if (stats != nullptr) (*stats)[s] = {ce_s.value, kl.value, objective, count_correct(logits, labels), logits.rows};
  }
  bundle.total = total_loss(bundle.ce, bundle.kl, bundle.lambda);
  return bundle;
}

template <typename T>
LossBundle train_step(Model<T>& model, const std::vector<VideoTensor<T>>& views, std::span<const int> labels,
                      const StepOptions& options, SgdOptimizer<T>& optimizer, double lr, long step_index,
                      std::vector<BranchStepStats>* stats) {
  auto grads = model.make_gradients();
  const LossBundle bundle = accumulate_gradients(model, views, labels, options, grads, stats);
  if (!std::isfinite(bundle.ce) || !std::isfinite(bundle.kl) || !std::isfinite(bundle.total)) {
    throw TrainingFault(step_index, "non-finite loss (ce " + std::to_string(bundle.ce) + ", kl " +
                                        std::to_string(bundle.kl) + ")");
  }
  optimizer.step(model, grads, lr);
  return bundle;
}

template <typename T>
std::vector<VideoTensor<T>> make_views(const Dataset& data, const std::vector<Clip>& split,
                                       std::span<const int> indices, const FrameBranchSet& branches,
                                       SampleVariant variant, std::mt19937_64* rng) {
  std::vector<VideoTensor<T>> views;
  for (int b = 0; b < branches.size(); ++b) {
    views.push_back(make_batch<T>(data, split, indices, branches.frames(b), variant, rng));
  }
  return views;
}

// ---------------------------------------------------------------- eval

namespace {

void check_frames(const std::vector<Clip>& split, int frames) {
  for (const auto& c : split) {
    if (frames > c.frame_count) {
      throw std::invalid_argument("cannot sample " + std::to_string(frames) + " frames from a " +
                                  std::to_string(c.frame_count) + "-frame clip");
    }
  }
}

std::vector<int> labels_of(const std::vector<Clip>& split, std::span<const int> idx) {
  std::vector<int> out;
  for (int i : idx) out.push_back(split[i].label);
  return out;
}

}  // namespace

EvalResult evaluate(const Model<float>& model, const Dataset& data, const std::vector<Clip>& split, int frames,
                    int batch_size) {
  check_frames(split, frames);
  EvalResult r;
  r.frames = frames;
  if (split.empty()) return r;
  double ce_sum = 0;
  int correct = 0;
  std::vector<int> idx;
  for (int start = 0; start < static_cast<int>(split.size()); start += batch_size) {
    idx.resize(std::min<int>(batch_size, static_cast<int>(split.size()) - start));
    std::iota(idx.begin(), idx.end(), start);
    const auto video = make_batch<float>(data, split, idx, frames, SampleVariant::eval, nullptr);
    const auto [logits, branch] = infer_any_frame(model, video);
    r.branch = branch;
    const auto labels = labels_of(split, idx);
    ce_sum += cross_entropy(logits, std::span<const int>(labels)).value * logits.rows;
    correct += count_correct(logits, std::span<const int>(labels));
  }
  r.top1 = 100.0 * correct / static_cast<double>(split.size());
  r.loss_ce = ce_sum / static_cast<double>(split.size());
  return r;
}

Matrix<float> predict_probs(const Model<float>& model, const Dataset& data, const std::vector<Clip>& split,
                            int frames, int batch_size) {
  check_frames(split, frames);
  Matrix<float> out(static_cast<int>(split.size()), model.spec().num_classes);
  std::vector<int> idx;
  for (int start = 0; start < static_cast<int>(split.size()); start += batch_size) {
    idx.resize(std::min<int>(batch_size, static_cast<int>(split.size()) - start));
    std::iota(idx.begin(), idx.end(), start);
    const auto video = make_batch<float>(data, split, idx, frames, SampleVariant::eval, nullptr);
    const auto probs = softmax(infer_any_frame(model, video).first);
    std::copy(probs.data.begin(), probs.data.end(), out.row(start).begin());
  }
  return out;
}

std::vector<MetricsRow> evaluate_branches(const Model<float>& model, const Dataset& data, int epoch, double lambda) {
  const auto& branches = model.branches();
  const int k = model.num_branches(), teacher = k - 1;
  const auto& split = data.val;
  std::vector<double> ce(k, 0.0), kl(k, 0.0);
  std::vector<int> correct(k, 0);
  std::vector<int> idx;
  const int batch = 32;
  for (int start = 0; start < static_cast<int>(split.size()); start += batch) {
    idx.resize(std::min<int>(batch, static_cast<int>(split.size()) - start));
    std::iota(idx.begin(), idx.end(), start);
    const auto labels = labels_of(split, idx);
    const auto views = make_views<float>(data, split, idx, branches, SampleVariant::eval, nullptr);
    const auto t_logits = model.predict_branch(views[teacher], teacher);
    const auto t_probs = softmax(t_logits);
    for (int b = 0; b < k; ++b) {
      const auto logits = b == teacher ? t_logits : model.predict_branch(views[b], b);
      ce[b] += cross_entropy(logits, std::span<const int>(labels)).value * logits.rows;
      if (b != teacher) kl[b] += distillation_kl(t_probs, logits).value * logits.rows;
      correct[b] += count_correct(logits, std::span<const int>(labels));
    }
  }
  std::vector<MetricsRow> rows;
  const double n = static_cast<double>(std::max<std::size_t>(1, split.size()));
  for (int b = 0; b < k; ++b) {
    rows.push_back({epoch, "val", branches.frames(b), ce[b] / n, kl[b] / n, ce[b] / n + lambda * kl[b] / n,
                    100.0 * correct[b] / n});
  }
  return rows;
}

// ---------------------------------------------------------------- metrics

std::string format_metrics(const std::vector<MetricsRow>& rows) {
  std::string out = std::string(kMetricsHeader) + "\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%d,%s,%d,%.6f,%.6f,%.6f,%.4f\n", r.epoch, r.split.c_str(), r.branch_frames,
                  r.loss_ce, r.loss_kl, r.loss_total, r.top1);
    out += buf;
  }
  return out;
}

void write_metrics_csv(const std::vector<MetricsRow>& rows, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write metrics: " + path.string());
  out << format_metrics(rows);
  if (!out) throw std::runtime_error("failed writing metrics: " + path.string());
}

// ---------------------------------------------------------------- runs

BackboneSpec backbone_for(const Dataset& data) {
  auto spec = BackboneSpec::toy(data.num_classes, data.channels);
  spec.height = data.height;
  spec.width = data.width;
  return spec;
}

Checkpoint initial_checkpoint(const TrainConfig& config, const Dataset& data) {
  if (!config.init_checkpoint.empty()) return load_checkpoint(config.init_checkpoint);
  const FrameBranchSet frames({config.frames.back()});
  return Model<float>::base(backbone_for(data), frames, config.seed).to_checkpoint();
}

Dataset dataset_for(const TrainConfig& config, bool regenerate) {
  if (!config.data_dir.empty()) return load_frame_tree(config.data_dir);
  const std::filesystem::path cache =
      config.data_cache.empty() ? std::filesystem::path(config.out_dir) / "dataset.ffnd"
                                : std::filesystem::path(config.data_cache);
  return load_or_generate(config.synthetic(), cache, regenerate);
}

TrainResult train_ffn(const TrainConfig& config, const Dataset& data, const ProgressFn& progress) {
  config.validate();
  const FrameBranchSet branches(config.frames);
  if (branches.size() < 2) throw std::invalid_argument("frame-flexible training needs at least two frame counts");
  if (data.train.empty()) throw std::invalid_argument("training split is empty");
  check_frames(data.train, branches.max_frames());

  const Checkpoint init = initial_checkpoint(config, data);
  TrainResult result{Model<float>::ffn(backbone_for(data), branches,
                                       FlexOptions{config.weight_alteration, config.private_norm}, config.seed, &init),
                     {}};
  Model<float>& model = result.model;
  SgdOptimizer<float> optimizer(model, config.momentum, config.weight_decay);
  std::mt19937_64 rng(config.seed ^ 0x5DEECE66Dull);
  const StepOptions options{config.lambda, config.distill, NormMode::train};

  const int n = static_cast<int>(data.train.size());
  const long steps_per_epoch = (n + config.batch_size - 1) / config.batch_size;
  const long total_steps = steps_per_epoch * config.epochs;
  const long warmup = std::lround(config.warmup_epochs * steps_per_epoch);
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  long step = 0;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<BranchStepStats> sum(branches.size());
    std::vector<BranchStepStats> stats;
    for (int start = 0; start < n; start += config.batch_size) {
      const std::span<const int> idx(order.data() + start, std::min(config.batch_size, n - start));
      const auto labels = labels_of(data.train, idx);
      const auto views = make_views<float>(data, data.train, idx, branches, SampleVariant::train, &rng);
      train_step(model, views, std::span<const int>(labels), options, optimizer,
                 scheduled_lr(config.lr, step, total_steps, warmup), step, &stats);
      ++step;
      for (int b = 0; b < branches.size(); ++b) {
        const double w = stats[b].count;
        sum[b].ce += stats[b].ce * w;
        sum[b].kl += stats[b].kl * w;
        sum[b].objective += stats[b].objective * w;
        sum[b].correct += stats[b].correct;
        sum[b].count += stats[b].count;
      }
    }
    for (int b = 0; b < branches.size(); ++b) {
      const double c = std::max(1, sum[b].count);
      result.metrics.push_back({epoch, "train", branches.frames(b), sum[b].ce / c, sum[b].kl / c,
                                sum[b].objective / c, 100.0 * sum[b].correct / c});
    }
    const auto val = evaluate_branches(model, data, epoch, options.distill ? options.lambda : 0.0);
    result.metrics.insert(result.metrics.end(), val.begin(), val.end());
    if (progress) {
      std::string line = "epoch " + std::to_string(epoch) + "/" + std::to_string(config.epochs) + " val top1";
      for (const auto& r : val) line += " " + std::to_string(r.branch_frames) + "F=" + std::to_string(r.top1);
      progress(line);
    }
  }
  return result;
}

template class SgdOptimizer<float>;
template class SgdOptimizer<double>;
template LossBundle accumulate_gradients(Model<float>&, const std::vector<VideoTensor<float>>&, std::span<const int>,
                                         const StepOptions&, Gradients<float>&, std::vector<BranchStepStats>*);
template LossBundle accumulate_gradients(Model<double>&, const std::vector<VideoTensor<double>>&, std::span<const int>,
                                         const StepOptions&, Gradients<double>&, std::vector<BranchStepStats>*);
template LossBundle train_step(Model<float>&, const std::vector<VideoTensor<float>>&, std::span<const int>,
                               const StepOptions&, SgdOptimizer<float>&, double, long, std::vector<BranchStepStats>*);
template LossBundle train_step(Model<double>&, const std::vector<VideoTensor<double>>&, std::span<const int>,
                               const StepOptions&, SgdOptimizer<double>&, double, long, std::vector<BranchStepStats>*);
template std::vector<VideoTensor<float>> make_views(const Dataset&, const std::vector<Clip>&, std::span<const int>,
                                                    const FrameBranchSet&, SampleVariant, std::mt19937_64*);
template std::vector<VideoTensor<double>> make_views(const Dataset&, const std::vector<Clip>&, std::span<const int>,
                                                     const FrameBranchSet&, SampleVariant, std::mt19937_64*);

}  // namespace ffn
