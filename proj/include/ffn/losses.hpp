#pragma once

#include <span>
#include <vector>

#include "ffn/tensor.hpp"

namespace ffn {

/// Student probabilities are clamped to this floor inside the log, so a
/// zero student probability under a positive teacher probability yields a
/// large finite loss instead of infinity.
inline constexpr double kProbabilityFloor = 1e-12;

struct LossBundle {
  double ce = 0.0;
  double kl = 0.0;
  double total = 0.0;
  double lambda = 1.0;
};

/// Scalar loss plus its gradient with respect to the logits it was computed from.
template <typename T>
struct LossGrad {
  double value = 0.0;
  Matrix<T> grad;
};

template <typename T>
Matrix<T> softmax(const Matrix<T>& logits);

/// Mean over the batch of -log softmax(logits)[label].
template <typename T>
LossGrad<T> cross_entropy(const Matrix<T>& logits, std::span<const int> labels);

/// Batch mean of KL(teacher || softmax(student_logits)). The teacher
/// distribution is a constant: the gradient only flows into the student.
template <typename T>
LossGrad<T> distillation_kl(const Matrix<T>& teacher_probs, const Matrix<T>& student_logits);

/// Probability-vector forms. Rows are batch items.
double ce_loss(const Matrix<double>& logits, std::span<const int> labels);
double kl_distill_loss(const Matrix<double>& teacher_probs, const std::vector<Matrix<double>>& student_probs);
double total_loss(double ce, double kl, double lambda = 1.0);

}  // namespace ffn
