#pragma once

// Frame-flexible video classifier.
//
// A backbone is a stack of convolution blocks followed by global average
// pooling over (time, height, width) and a linear classifier. Each block is
//
//   temporal shift -> conv(W) -> norm[b] -> z + phi[b] (*) z -> ReLU
//
// where W and the classifier are shared by every branch b, while the
// normalization parameters/statistics and the depthwise alteration kernel
// phi[b] are private to the branch. phi starts at zero so a freshly built
// model reproduces its base network exactly.
//
// A "base" model is the plain backbone: one normalization set, no phi.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ffn/branch_set.hpp"
#include "ffn/checkpoint.hpp"
#include "ffn/kernels.hpp"
#include "ffn/tensor.hpp"
#include "json.hpp"

namespace ffn {

inline constexpr double kNormEpsilon = 1e-5;
inline constexpr double kNormMomentum = 0.1;
inline constexpr int kCheckpointVersion = 1;

struct BlockSpec {
  int out_channels = 0;
  int kernel = 3;
  int stride = 1;
  int padding = 1;
  bool operator==(const BlockSpec&) const = default;
};

struct BackboneSpec {
  int in_channels = 1;
  int height = 32;
  int width = 32;
  int num_classes = 8;
  double shift_fraction = 0.125;  // of input channels, per direction
  int alteration_kernel = 3;
  std::vector<BlockSpec> blocks;

  /// Reference toy backbone: 4x4 patchify block, then three 3x3 blocks,
  /// widths 32/64/192/320, ending at 2x2 spatial resolution.
  static BackboneSpec toy(int num_classes = 8, int in_channels = 1);

  void validate() const;
  std::vector<ConvGeometry> geometries() const;
  int shift_fold(int block) const;
  int feature_channels() const { return blocks.back().out_channels; }

  bool operator==(const BackboneSpec&) const = default;
};

void to_json(nlohmann::json& j, const BackboneSpec& s);
void from_json(const nlohmann::json& j, BackboneSpec& s);

enum class ModelKind { base, ffn };

/// Ablation switches for frame-flexible models.
struct FlexOptions {
  bool weight_alteration = true;
  bool private_norm = true;
  bool operator==(const FlexOptions&) const = default;
};

/// How normalization layers treat statistics during a forward pass.
enum class NormMode {
  train,        // batch statistics, running statistics updated
  eval,         // stored running statistics
  batch_stats,  // batch statistics, nothing updated
};

template <typename T>
struct NamedArray {
  std::string name;
  std::vector<int> shape;
  std::vector<T> values;
  bool trainable = true;
  int branch = -1;  // -1: shared
};

/// One gradient buffer per model array (empty for non-trainable buffers).
template <typename T>
struct Gradients {
  std::vector<std::vector<T>> values;
  void zero();
};

template <typename T>
struct BlockCache {
  FeatureMap<T> shifted;   // conv input
  FeatureMap<T> conv_out;  // norm input
  FeatureMap<T> normed;    // alteration input
  FeatureMap<T> act;       // block output (post-ReLU)
  std::vector<T> mean, var;
};

template <typename T>
struct ForwardCache {
  int time = 0;
  int branch = 0;
  NormMode mode = NormMode::eval;
  std::vector<BlockCache<T>> blocks;
  Matrix<T> pooled;
};

/// Count of learnable parameters (running statistics excluded).
struct ParameterReport {
  std::size_t shared = 0;
  std::vector<std::size_t> per_branch;
  std::size_t total = 0;
  std::size_t base_total = 0;  // plain backbone with one normalization set
  double overhead_ratio = 0.0;
};

class FrameCountMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

template <typename T>
class Model {
 public:
  Model() = default;

  /// Plain backbone, Kaiming-initialized from `seed`. `frames` records the
  /// frame count(s) it is meant to be trained at.
  static Model base(const BackboneSpec& spec, FrameBranchSet frames, std::uint64_t seed);

  /// Frame-flexible model. Shared weights and normalization come from `init`
  /// (a base checkpoint) when given, otherwise from a seeded base model; each
  /// branch's normalization is a clone of the base one, every phi is zero.
  static Model ffn(const BackboneSpec& spec, FrameBranchSet branches, FlexOptions options,
                   std::uint64_t seed, const Checkpoint* init = nullptr);

  static Model from_checkpoint(const Checkpoint& checkpoint);
  Checkpoint to_checkpoint() const;

  ModelKind kind() const { return kind_; }
  const BackboneSpec& spec() const { return spec_; }
  const FrameBranchSet& branches() const { return branches_; }
  const FlexOptions& options() const { return options_; }
  int num_branches() const { return kind_ == ModelKind::ffn ? branches_.size() : 1; }
  int num_norm_sets() const { return kind_ == ModelKind::ffn && options_.private_norm ? branches_.size() : 1; }
  bool has_alteration() const { return kind_ == ModelKind::ffn && options_.weight_alteration; }

  std::vector<NamedArray<T>>& arrays() { return arrays_; }
  const std::vector<NamedArray<T>>& arrays() const { return arrays_; }
  NamedArray<T>& array(const std::string& name);
  const NamedArray<T>& array(const std::string& name) const;

  Gradients<T> make_gradients() const;
  ParameterReport count_parameters() const;

  /// Branch-indexed forward; the clip length must equal the branch's count
  /// (base models accept any length on branch 0).
  Matrix<T> forward_branch(const VideoTensor<T>& video, int branch, NormMode mode,
                           ForwardCache<T>* cache = nullptr);
  Matrix<T> predict_branch(const VideoTensor<T>& video, int branch) const;

  /// Runs `branch` on a clip of any length. Routing and frame-count checks
  /// are the caller's business.
  Matrix<T> run(const VideoTensor<T>& video, int branch, NormMode mode,
                ForwardCache<T>* cache = nullptr);
  Matrix<T> run_eval(const VideoTensor<T>& video, int branch) const;

  void backward(const ForwardCache<T>& cache, const Matrix<T>& grad_logits,
                Gradients<T>& grads) const;

  /// Index helpers into arrays().
  int weight_index(int block) const { return blocks_.at(block).weight; }
  int phi_index(int block, int branch) const { return blocks_.at(block).phi.at(branch); }
  int gamma_index(int block, int branch) const { return blocks_.at(block).gamma.at(norm_set(branch)); }
  int beta_index(int block, int branch) const { return blocks_.at(block).beta.at(norm_set(branch)); }
  int mean_index(int block, int branch) const { return blocks_.at(block).mean.at(norm_set(branch)); }
  int var_index(int block, int branch) const { return blocks_.at(block).var.at(norm_set(branch)); }
  int classifier_weight_index() const { return classifier_weight_; }
  int classifier_bias_index() const { return classifier_bias_; }
  int norm_set(int branch) const { return num_norm_sets() == 1 ? 0 : branch; }

  template <typename U>
  Model<U> cast() const;

 private:
  template <typename U>
  friend class Model;

  struct BlockIndex {
    int weight = -1;
    std::vector<int> phi;
    std::vector<int> gamma, beta, mean, var;  // per normalization set
  };

  void allocate();
  int add_array(std::string name, std::vector<int> shape, bool trainable, int branch, T fill);
  void check_branch(int branch) const;
  Matrix<T> forward_impl(const VideoTensor<T>& video, int branch, NormMode mode, ForwardCache<T>* cache,
                         std::vector<BatchMoments<T>>* moments_out) const;

  ModelKind kind_ = ModelKind::base;
  BackboneSpec spec_;
  FrameBranchSet branches_;
  FlexOptions options_;
  std::vector<NamedArray<T>> arrays_;
  std::vector<BlockIndex> blocks_;
  int classifier_weight_ = -1;
  int classifier_bias_ = -1;
};

/// Parameter count of the plain backbone described by `spec`.
std::size_t base_parameter_count(const BackboneSpec& spec);

/// Routed inference: picks the branch via select_branch on the clip length
/// and runs it on the clip as-is (no temporal resampling). Returns logits and
/// the branch used.
template <typename T>
std::pair<Matrix<T>, int> infer_any_frame(const Model<T>& model, const VideoTensor<T>& video);

/// out = z + depthwise(z, phi). Shape-preserving.
template <typename T>
FeatureMap<T> weight_alteration(const FeatureMap<T>& z, std::span<const T> phi, int kernel = 3);

/// Affine normalization by the given parameters; NormMode::eval uses the
/// stored mean/var, the batch modes normalize by batch moments and (train)
/// fold them into mean/var with momentum kNormMomentum.
template <typename T>
struct NormParamsView {
  std::span<const T> gamma;
  std::span<const T> beta;
  std::span<T> mean;
  std::span<T> var;
};
template <typename T>
FeatureMap<T> branch_normalize(const FeatureMap<T>& x, NormParamsView<T> params, NormMode mode);

std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& s);

}  // namespace ffn
