#include "ffn/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace ffn {

namespace {

std::string shape_string(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

std::string block_name(int block, const std::string& part) {
  return "block" + std::to_string(block) + "." + part;
}

std::string branch_name(int block, int branch, const std::string& field) {
  return block_name(block, "branch" + std::to_string(branch) + "." + field);
}

template <typename T>
void fold_running(std::span<T> running_mean, std::span<T> running_var, const BatchMoments<T>& m,
                  double count) {
  const double unbias = count > 1 ? count / (count - 1) : 1.0;
  for (std::size_t c = 0; c < running_mean.size(); ++c) {
    running_mean[c] = static_cast<T>((1 - kNormMomentum) * running_mean[c] + kNormMomentum * m.mean[c]);
    running_var[c] =
        static_cast<T>((1 - kNormMomentum) * running_var[c] + kNormMomentum * m.var[c] * unbias);
  }
}

}  // namespace

// ---------------------------------------------------------------- spec

BackboneSpec BackboneSpec::toy(int num_classes, int in_channels) {
  BackboneSpec s;
  s.in_channels = in_channels;
  s.num_classes = num_classes;
  s.blocks = {{32, 4, 4, 0}, {64, 3, 1, 1}, {192, 3, 2, 1}, {320, 3, 2, 1}};
  return s;
}

void BackboneSpec::validate() const {
  if (in_channels < 1 || height < 1 || width < 1) throw std::invalid_argument("backbone: bad input shape");
  if (num_classes < 2) throw std::invalid_argument("backbone: need at least 2 classes");
  if (blocks.empty()) throw std::invalid_argument("backbone: no blocks");
  if (shift_fraction < 0 || shift_fraction > 0.5) throw std::invalid_argument("backbone: shift fraction outside [0, 0.5]");
  if (alteration_kernel < 1 || alteration_kernel % 2 == 0) {
    throw std::invalid_argument("backbone: alteration kernel must be odd");
  }
  int h = height, w = width;
  for (const auto& g : geometries()) {
    if (g.out_channels < 1 || g.kernel < 1 || g.stride < 1 || g.padding < 0) {
      throw std::invalid_argument("backbone: bad block geometry");
    }
    h = g.out_extent(h);
    w = g.out_extent(w);
    if (h < 1 || w < 1) throw std::invalid_argument("backbone: blocks shrink the frame below 1x1");
  }
}

std::vector<ConvGeometry> BackboneSpec::geometries() const {
  std::vector<ConvGeometry> out;
  int cin = in_channels;
  for (const auto& b : blocks) {
    out.push_back({cin, b.out_channels, b.kernel, b.stride, b.padding});
    cin = b.out_channels;
  }
  return out;
}

int BackboneSpec::shift_fold(int block) const {
  const int cin = block == 0 ? in_channels : blocks.at(block - 1).out_channels;
  return static_cast<int>(std::floor(cin * shift_fraction));
}

void to_json(nlohmann::json& j, const BackboneSpec& s) {
  j = {{"in_channels", s.in_channels},       {"height", s.height},
       {"width", s.width},                   {"num_classes", s.num_classes},
       {"shift_fraction", s.shift_fraction}, {"alteration_kernel", s.alteration_kernel},
       {"blocks", nlohmann::json::array()}};
  for (const auto& b : s.blocks) {
    j["blocks"].push_back(
        {{"out_channels", b.out_channels}, {"kernel", b.kernel}, {"stride", b.stride}, {"padding", b.padding}});
  }
}

void from_json(const nlohmann::json& j, BackboneSpec& s) {
  s.in_channels = j.at("in_channels").get<int>();
  s.height = j.at("height").get<int>();
  s.width = j.at("width").get<int>();
  s.num_classes = j.at("num_classes").get<int>();
  s.shift_fraction = j.at("shift_fraction").get<double>();
  s.alteration_kernel = j.at("alteration_kernel").get<int>();
  s.blocks.clear();
  for (const auto& b : j.at("blocks")) {
    s.blocks.push_back({b.at("out_channels").get<int>(), b.at("kernel").get<int>(),
                        b.at("stride").get<int>(), b.at("padding").get<int>()});
  }
}

std::string to_string(ModelKind kind) { return kind == ModelKind::ffn ? "ffn" : "base"; }

ModelKind model_kind_from_string(const std::string& s) {
  if (s == "ffn") return ModelKind::ffn;
  if (s == "base") return ModelKind::base;
  throw std::invalid_argument("unknown model kind: " + s);
}

std::size_t base_parameter_count(const BackboneSpec& spec) {
  std::size_t n = 0;
  for (const auto& g : spec.geometries()) n += g.weight_size() + 2 * static_cast<std::size_t>(g.out_channels);
  return n + static_cast<std::size_t>(spec.feature_channels()) * spec.num_classes + spec.num_classes;
}

// ---------------------------------------------------------------- model

template <typename T>
void Gradients<T>::zero() {
  for (auto& v : values) std::fill(v.begin(), v.end(), T(0));
}

template <typename T>
int Model<T>::add_array(std::string name, std::vector<int> shape, bool trainable, int branch, T fill) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  arrays_.push_back({std::move(name), std::move(shape), std::vector<T>(n, fill), trainable, branch});
  return static_cast<int>(arrays_.size()) - 1;
}

template <typename T>
void Model<T>::allocate() {
  spec_.validate();
  arrays_.clear();
  blocks_.clear();
  const auto geoms = spec_.geometries();
  const int norm_sets = num_norm_sets();
  for (int i = 0; i < static_cast<int>(geoms.size()); ++i) {
    const auto& g = geoms[i];
    BlockIndex idx;
    idx.weight = add_array(block_name(i, "shared.W"), {g.out_channels, g.in_channels, g.kernel, g.kernel},
                           true, -1, T(0));
    for (int s = 0; s < norm_sets; ++s) {
      // A single set on a frame-flexible model is shared by every branch.
      const int owner = (kind_ == ModelKind::ffn && norm_sets == 1) ? -1 : s;
      idx.gamma.push_back(add_array(branch_name(i, s, "gamma"), {g.out_channels}, true, owner, T(1)));
      idx.beta.push_back(add_array(branch_name(i, s, "beta"), {g.out_channels}, true, owner, T(0)));
      idx.mean.push_back(add_array(branch_name(i, s, "mu"), {g.out_channels}, false, owner, T(0)));
      idx.var.push_back(add_array(branch_name(i, s, "var"), {g.out_channels}, false, owner, T(1)));
    }
    if (has_alteration()) {
      const int k = spec_.alteration_kernel;
      for (int b = 0; b < branches_.size(); ++b) {
        idx.phi.push_back(add_array(branch_name(i, b, "phi"), {g.out_channels, k, k}, true, b, T(0)));
      }
    }
    blocks_.push_back(std::move(idx));
  }
  classifier_weight_ = add_array("classifier.W", {spec_.num_classes, spec_.feature_channels()}, true, -1, T(0));
  classifier_bias_ = add_array("classifier.b", {spec_.num_classes}, true, -1, T(0));
}

template <typename T>
Model<T> Model<T>::base(const BackboneSpec& spec, FrameBranchSet frames, std::uint64_t seed) {
  Model m;
  m.kind_ = ModelKind::base;
  m.spec_ = spec;
  m.branches_ = std::move(frames);
  m.allocate();

  std::mt19937_64 rng(seed);
  const auto geoms = spec.geometries();
  for (std::size_t i = 0; i < geoms.size(); ++i) {
    const double fan_in = static_cast<double>(geoms[i].in_channels) * geoms[i].kernel * geoms[i].kernel;
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
    for (auto& w : m.arrays_[m.blocks_[i].weight].values) w = static_cast<T>(dist(rng));
  }
  std::normal_distribution<double> head(0.0, 0.01);
  for (auto& w : m.arrays_[m.classifier_weight_].values) w = static_cast<T>(head(rng));
  return m;
}

template <typename T>
Model<T> Model<T>::ffn(const BackboneSpec& spec, FrameBranchSet branches, FlexOptions options,
                       std::uint64_t seed, const Checkpoint* init) {
  Model m;
  m.kind_ = ModelKind::ffn;
  m.spec_ = spec;
  m.branches_ = std::move(branches);
  m.options_ = options;
  m.allocate();

  Checkpoint seeded;
  if (init == nullptr) {
    seeded = Model<float>::base(spec, FrameBranchSet({m.branches_.max_frames()}), seed).to_checkpoint();
    init = &seeded;
  }

  auto fetch = [&](const std::string& name, const std::vector<int>& shape) -> const ArrayRecord& {
    const ArrayRecord* rec = init->find(name);
    if (rec == nullptr) throw ShapeError("init checkpoint is missing layer " + name);
    if (rec->shape != shape) {
      throw ShapeError("init checkpoint layer " + name + " has shape " + shape_string(rec->shape) +
                       ", backbone expects " + shape_string(shape));
    }
    return *rec;
  };
  auto copy_into = [](NamedArray<T>& dst, const ArrayRecord& src) {
    std::transform(src.values.begin(), src.values.end(), dst.values.begin(),
                   [](float v) { return static_cast<T>(v); });
  };

  for (std::size_t i = 0; i < m.blocks_.size(); ++i) {
    const auto& idx = m.blocks_[i];
    auto& w = m.arrays_[idx.weight];
    copy_into(w, fetch(w.name, w.shape));
    const std::vector<int> cshape = {spec.blocks[i].out_channels};
    const int bi = static_cast<int>(i);
    for (std::size_t s = 0; s < idx.gamma.size(); ++s) {
      copy_into(m.arrays_[idx.gamma[s]], fetch(branch_name(bi, 0, "gamma"), cshape));
      copy_into(m.arrays_[idx.beta[s]], fetch(branch_name(bi, 0, "beta"), cshape));
      copy_into(m.arrays_[idx.mean[s]], fetch(branch_name(bi, 0, "mu"), cshape));
      copy_into(m.arrays_[idx.var[s]], fetch(branch_name(bi, 0, "var"), cshape));
    }
  }
  auto& cw = m.arrays_[m.classifier_weight_];
  copy_into(cw, fetch(cw.name, cw.shape));
  auto& cb = m.arrays_[m.classifier_bias_];
  copy_into(cb, fetch(cb.name, cb.shape));
  return m;
}

template <typename T>
Model<T> Model<T>::from_checkpoint(const Checkpoint& checkpoint) {
  const auto& meta = checkpoint.metadata;
  const int version = meta.value("version", 0);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  }
  Model m;
  m.kind_ = model_kind_from_string(meta.at("kind").get<std::string>());
  m.spec_ = meta.at("backbone").get<BackboneSpec>();
  m.branches_ = FrameBranchSet(meta.at("frame_counts").get<std::vector<int>>());
  if (meta.contains("options")) {
    m.options_.weight_alteration = meta["options"].at("weight_alteration").get<bool>();
    m.options_.private_norm = meta["options"].at("private_norm").get<bool>();
  }
  if (meta.at("num_classes").get<int>() != m.spec_.num_classes) {
    throw std::runtime_error("checkpoint metadata disagrees on the number of classes");
  }
  m.allocate();
  for (auto& a : m.arrays_) {
    const ArrayRecord* rec = checkpoint.find(a.name);
    if (rec == nullptr) throw ShapeError("checkpoint is missing layer " + a.name);
    if (rec->shape != a.shape) {
      throw ShapeError("checkpoint layer " + a.name + " has shape " + shape_string(rec->shape) +
                       ", expected " + shape_string(a.shape));
    }
    std::transform(rec->values.begin(), rec->values.end(), a.values.begin(),
                   [](float v) { return static_cast<T>(v); });
  }
  return m;
}

template <typename T>
Checkpoint Model<T>::to_checkpoint() const {
  Checkpoint c;
  c.metadata = {{"version", kCheckpointVersion},
                {"kind", to_string(kind_)},
                {"frame_counts", std::vector<int>(branches_.frame_counts().begin(), branches_.frame_counts().end())},
                {"backbone", spec_},
                {"num_classes", spec_.num_classes},
                {"options",
                 {{"weight_alteration", options_.weight_alteration}, {"private_norm", options_.private_norm}}}};
  for (const auto& a : arrays_) {
    ArrayRecord r{a.name, a.shape, {}, a.trainable, a.branch};
    r.values.reserve(a.values.size());
    for (T v : a.values) r.values.push_back(static_cast<float>(v));
    c.arrays.push_back(std::move(r));
  }
  return c;
}

template <typename T>
NamedArray<T>& Model<T>::array(const std::string& name) {
  for (auto& a : arrays_)
    if (a.name == name) return a;
  throw std::out_of_range("no model array named " + name);
}

template <typename T>
const NamedArray<T>& Model<T>::array(const std::string& name) const {
  for (const auto& a : arrays_)
    if (a.name == name) return a;
  throw std::out_of_range("no model array named " + name);
}

template <typename T>
Gradients<T> Model<T>::make_gradients() const {
  Gradients<T> g;
  for (const auto& a : arrays_) g.values.emplace_back(a.trainable ? a.values.size() : 0, T(0));
  return g;
}

template <typename T>
ParameterReport Model<T>::count_parameters() const {
  ParameterReport r;
  r.per_branch.assign(num_branches(), 0);
  for (const auto& a : arrays_) {
    if (!a.trainable) continue;
    if (a.branch < 0) r.shared += a.values.size();
    else r.per_branch.at(a.branch) += a.values.size();
    r.total += a.values.size();
  }
  r.base_total = base_parameter_count(spec_);
  r.overhead_ratio = (static_cast<double>(r.total) - static_cast<double>(r.base_total)) /
                     static_cast<double>(r.base_total);
  return r;
}

template <typename T>
void Model<T>::check_branch(int branch) const {
  if (branch < 0 || branch >= num_branches()) {
    throw std::out_of_range("branch index " + std::to_string(branch) + " out of range");
  }
}

template <typename T>
Matrix<T> Model<T>::forward_branch(const VideoTensor<T>& video, int branch, NormMode mode,
                                   ForwardCache<T>* cache) {
  check_branch(branch);
  if (kind_ == ModelKind::ffn && video.frame_count != branches_.frames(branch)) {
    throw FrameCountMismatch("branch " + std::to_string(branch) + " expects " +
                             std::to_string(branches_.frames(branch)) + " frames, clip has " +
                             std::to_string(video.frame_count));
  }
  return run(video, branch, mode, cache);
}

template <typename T>
Matrix<T> Model<T>::predict_branch(const VideoTensor<T>& video, int branch) const {
  check_branch(branch);
  if (kind_ == ModelKind::ffn && video.frame_count != branches_.frames(branch)) {
    throw FrameCountMismatch("branch " + std::to_string(branch) + " expects " +
                             std::to_string(branches_.frames(branch)) + " frames, clip has " +
                             std::to_string(video.frame_count));
  }
  return run_eval(video, branch);
}

template <typename T>
Matrix<T> Model<T>::run(const VideoTensor<T>& video, int branch, NormMode mode, ForwardCache<T>* cache) {
  if (mode != NormMode::train) return forward_impl(video, branch, mode, cache, nullptr);
  std::vector<BatchMoments<T>> moments;
  Matrix<T> logits = forward_impl(video, branch, mode, cache, &moments);
  const double count = static_cast<double>(video.frames.frames);
  const auto geoms = spec_.geometries();
  int h = spec_.height, w = spec_.width;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const auto& g = geoms[i];
    h = g.out_extent(h);
    w = g.out_extent(w);
    const int set = norm_set(branch);
    fold_running(std::span<T>(arrays_[blocks_[i].mean[set]].values), std::span<T>(arrays_[blocks_[i].var[set]].values),
                 moments[i], count * h * w);
  }
  return logits;
}

template <typename T>
Matrix<T> Model<T>::run_eval(const VideoTensor<T>& video, int branch) const {
  return forward_impl(video, branch, NormMode::eval, nullptr, nullptr);
}

template <typename T>
Matrix<T> Model<T>::forward_impl(const VideoTensor<T>& video, int branch, NormMode mode,
                                 ForwardCache<T>* cache, std::vector<BatchMoments<T>>* moments_out) const {
  check_branch(branch);
  if (video.channels() != spec_.in_channels || video.height() != spec_.height ||
      video.width() != spec_.width) {
    throw ShapeError("video frames do not match the backbone input shape");
  }
  if (video.frame_count < 1 || video.frames.frames != video.batch * video.frame_count) {
    throw ShapeError("video tensor has inconsistent frame count");
  }
  const int time = video.frame_count;
  const auto geoms = spec_.geometries();
  const T eps = static_cast<T>(kNormEpsilon);

  if (cache != nullptr) {
    cache->time = time;
    cache->branch = branch;
    cache->mode = mode;
    cache->blocks.assign(geoms.size(), {});
  }
  BlockCache<T> scratch[2];
  const FeatureMap<T>* cur = &video.frames;

  for (std::size_t i = 0; i < geoms.size(); ++i) {
    BlockCache<T>& bc = cache != nullptr ? cache->blocks[i] : scratch[i % 2];
    const int fold = spec_.shift_fold(static_cast<int>(i));
    const auto& idx = blocks_[i];
    const int set = norm_set(branch);

    if (fold > 0) kernels::temporal_shift(*cur, time, fold, false, bc.shifted);
    else bc.shifted = *cur;
    kernels::conv2d_forward(bc.shifted, std::span<const T>(arrays_[idx.weight].values), geoms[i], bc.conv_out);

    std::span<const T> gamma(arrays_[idx.gamma[set]].values);
    std::span<const T> beta(arrays_[idx.beta[set]].values);
    const auto& run_mean = arrays_[idx.mean[set]].values;
    const auto& run_var = arrays_[idx.var[set]].values;
    if (mode == NormMode::eval) {
      kernels::batch_norm_eval(bc.conv_out, gamma, beta, std::span<const T>(run_mean),
                               std::span<const T>(run_var), eps, bc.normed);
      bc.mean = run_mean;
      bc.var = run_var;
    } else {
      BatchMoments<T> moments;
      kernels::batch_norm_train(bc.conv_out, gamma, beta, eps, bc.normed, moments);
      bc.mean = moments.mean;
      bc.var = moments.var;
      if (moments_out != nullptr) moments_out->push_back(std::move(moments));
    }

    if (has_alteration()) {
      bc.act = weight_alteration(bc.normed, std::span<const T>(arrays_[idx.phi[branch]].values),
                                 spec_.alteration_kernel);
    } else {
      bc.act = bc.normed;
    }
    kernels::relu_forward(bc.act);
    cur = &bc.act;
  }

  Matrix<T> pooled;
  kernels::global_avg_pool(*cur, time, pooled);
  const auto& w = arrays_[classifier_weight_].values;
  const auto& b = arrays_[classifier_bias_].values;
  const int K = spec_.num_classes, C = pooled.cols;
  Matrix<T> logits(pooled.rows, K);
  for (int n = 0; n < pooled.rows; ++n)
    for (int k = 0; k < K; ++k) {
      T acc = b[k];
      for (int c = 0; c < C; ++c) acc += pooled(n, c) * w[k * C + c];
      logits(n, k) = acc;
    }
  if (cache != nullptr) cache->pooled = std::move(pooled);
  return logits;
}

template <typename T>
void Model<T>::backward(const ForwardCache<T>& cache, const Matrix<T>& grad_logits,
                        Gradients<T>& grads) const {
  if (cache.blocks.size() != blocks_.size()) throw std::invalid_argument("backward: cache does not match model");
  if (grads.values.size() != arrays_.size()) throw std::invalid_argument("backward: gradient buffers do not match model");
  const auto geoms = spec_.geometries();
  const int K = spec_.num_classes, C = cache.pooled.cols, N = cache.pooled.rows;
  const int time = cache.time;
  const int branch = cache.branch;
  const T eps = static_cast<T>(kNormEpsilon);

  const auto& w = arrays_[classifier_weight_].values;
  auto& gw = grads.values[classifier_weight_];
  auto& gb = grads.values[classifier_bias_];
  Matrix<T> grad_pooled(N, C);
  for (int n = 0; n < N; ++n)
    for (int k = 0; k < K; ++k) {
      const T g = grad_logits(n, k);
      gb[k] += g;
      for (int c = 0; c < C; ++c) {
        gw[k * C + c] += g * cache.pooled(n, c);
        grad_pooled(n, c) += g * w[k * C + c];
      }
    }

  FeatureMap<T> grad;
  grad.reshape_like(cache.blocks.back().act);
  kernels::global_avg_pool_backward(grad_pooled, time, grad);

  for (int i = static_cast<int>(geoms.size()) - 1; i >= 0; --i) {
    const BlockCache<T>& bc = cache.blocks[i];
    const auto& idx = blocks_[i];
    const int set = norm_set(branch);

    kernels::relu_backward(bc.act, grad);
    FeatureMap<T> grad_normed;
    if (has_alteration()) {
      grad_normed = grad;  // residual path
      const int phi = idx.phi[branch];
      kernels::depthwise_backward(bc.normed, std::span<const T>(arrays_[phi].values), spec_.alteration_kernel,
                                  grad, std::span<T>(grads.values[phi]), &grad_normed);
    } else {
      grad_normed = std::move(grad);
    }

    FeatureMap<T> grad_conv;
    kernels::batch_norm_backward(bc.conv_out, std::span<const T>(arrays_[idx.gamma[set]].values),
                                 std::span<const T>(bc.mean), std::span<const T>(bc.var), eps,
                                 cache.mode != NormMode::eval, grad_normed,
                                 std::span<T>(grads.values[idx.gamma[set]]),
                                 std::span<T>(grads.values[idx.beta[set]]), grad_conv);

    FeatureMap<T> grad_shifted;
    kernels::conv2d_backward(bc.shifted, std::span<const T>(arrays_[idx.weight].values), geoms[i], grad_conv,
                             std::span<T>(grads.values[idx.weight]), i > 0 ? &grad_shifted : nullptr);
    if (i == 0) break;
    const int fold = spec_.shift_fold(i);
    if (fold > 0) kernels::temporal_shift(grad_shifted, time, fold, true, grad);
    else grad = std::move(grad_shifted);
  }
}

template <typename T>
template <typename U>
Model<U> Model<T>::cast() const {
  Model<U> m;
  m.kind_ = kind_;
  m.spec_ = spec_;
  m.branches_ = branches_;
  m.options_ = options_;
  m.classifier_weight_ = classifier_weight_;
  m.classifier_bias_ = classifier_bias_;
  for (const auto& b : blocks_) {
    typename Model<U>::BlockIndex idx;
    idx.weight = b.weight;
    idx.phi = b.phi;
    idx.gamma = b.gamma;
    idx.beta = b.beta;
    idx.mean = b.mean;
    idx.var = b.var;
    m.blocks_.push_back(std::move(idx));
  }
  for (const auto& a : arrays_) {
    NamedArray<U> c{a.name, a.shape, std::vector<U>(a.values.size()), a.trainable, a.branch};
    std::transform(a.values.begin(), a.values.end(), c.values.begin(), [](T v) { return static_cast<U>(v); });
    m.arrays_.push_back(std::move(c));
  }
  return m;
}

// ---------------------------------------------------------------- free ops

template <typename T>
std::pair<Matrix<T>, int> infer_any_frame(const Model<T>& model, const VideoTensor<T>& video) {
  const int branch = model.kind() == ModelKind::ffn ? select_branch(model.branches(), video.frame_count) : 0;
  return {model.run_eval(video, branch), branch};
}

template <typename T>
FeatureMap<T> weight_alteration(const FeatureMap<T>& z, std::span<const T> phi, int kernel) {
  if (phi.size() != static_cast<std::size_t>(z.channels) * kernel * kernel) {
    throw ShapeError("weight_alteration: kernel has " + std::to_string(phi.size()) + " taps, feature map has " +
                     std::to_string(z.channels) + " channels");
  }
  FeatureMap<T> out;
  kernels::depthwise_forward(z, phi, kernel, out);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += z.data[i];
  return out;
}

template <typename T>
FeatureMap<T> branch_normalize(const FeatureMap<T>& x, NormParamsView<T> p, NormMode mode) {
  const auto C = static_cast<std::size_t>(x.channels);
  if (p.gamma.size() != C || p.beta.size() != C || p.mean.size() != C || p.var.size() != C) {
    throw ShapeError("branch_normalize: parameter length does not match channel count");
  }
  const T eps = static_cast<T>(kNormEpsilon);
  FeatureMap<T> out;
  if (mode == NormMode::eval) {
    kernels::batch_norm_eval(x, p.gamma, p.beta, std::span<const T>(p.mean), std::span<const T>(p.var), eps, out);
    return out;
  }
  BatchMoments<T> moments;
  kernels::batch_norm_train(x, p.gamma, p.beta, eps, out, moments);
  if (mode == NormMode::train) fold_running(p.mean, p.var, moments, static_cast<double>(x.frames) * x.plane());
  return out;
}

template struct Gradients<float>;
template struct Gradients<double>;
template class Model<float>;
template class Model<double>;
template Model<double> Model<float>::cast<double>() const;
template Model<float> Model<double>::cast<float>() const;
template std::pair<Matrix<float>, int> infer_any_frame(const Model<float>&, const VideoTensor<float>&);
template std::pair<Matrix<double>, int> infer_any_frame(const Model<double>&, const VideoTensor<double>&);
template FeatureMap<float> weight_alteration(const FeatureMap<float>&, std::span<const float>, int);
template FeatureMap<double> weight_alteration(const FeatureMap<double>&, std::span<const double>, int);
template FeatureMap<float> branch_normalize(const FeatureMap<float>&, NormParamsView<float>, NormMode);
template FeatureMap<double> branch_normalize(const FeatureMap<double>&, NormParamsView<double>, NormMode);

}  // namespace ffn
