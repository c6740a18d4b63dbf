#include "ffn/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace ffn {

namespace {

template <typename T>
std::vector<double> log_softmax_row(std::span<const T> z) {
  const double m = *std::max_element(z.begin(), z.end());
  double sum = 0;
  for (T v : z) sum += std::exp(v - m);
  const double lse = m + std::log(sum);
  std::vector<double> out(z.size());
  for (std::size_t k = 0; k < z.size(); ++k) out[k] = z[k] - lse;
  return out;
}

void check_distribution(std::span<const double> p, const char* what) {
  double sum = 0;
  for (double v : p) {
    if (v < 0 || !std::isfinite(v)) throw std::invalid_argument(std::string(what) + ": invalid probability");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-6) throw std::invalid_argument(std::string(what) + ": probabilities do not sum to 1");
}

}  // namespace

template <typename T>
Matrix<T> softmax(const Matrix<T>& logits) {
  Matrix<T> p(logits.rows, logits.cols);
  for (int n = 0; n < logits.rows; ++n) {
    const auto ls = log_softmax_row(logits.row(n));
    for (int k = 0; k < logits.cols; ++k) p(n, k) = static_cast<T>(std::exp(ls[k]));
  }
  return p;
}

template <typename T>
LossGrad<T> cross_entropy(const Matrix<T>& logits, std::span<const int> labels) {
  if (logits.cols < 2) throw std::invalid_argument("cross_entropy: need at least 2 classes");
  if (static_cast<int>(labels.size()) != logits.rows) throw ShapeError("cross_entropy: one label per row required");
  LossGrad<T> out{0.0, Matrix<T>(logits.rows, logits.cols)};
  const double inv_n = 1.0 / logits.rows;
  for (int n = 0; n < logits.rows; ++n) {
    const int y = labels[n];
    if (y < 0 || y >= logits.cols) {
      throw std::out_of_range("cross_entropy: label " + std::to_string(y) + " outside 0.." +
                              std::to_string(logits.cols - 1));
    }
    const auto ls = log_softmax_row(logits.row(n));
    out.value -= ls[y] * inv_n;
    for (int k = 0; k < logits.cols; ++k) {
      out.grad(n, k) = static_cast<T>((std::exp(ls[k]) - (k == y ? 1.0 : 0.0)) * inv_n);
    }
  }
  return out;
}

template <typename T>
LossGrad<T> distillation_kl(const Matrix<T>& teacher_probs, const Matrix<T>& student_logits) {
  if (teacher_probs.rows != student_logits.rows || teacher_probs.cols != student_logits.cols) {
    throw ShapeError("distillation_kl: teacher and student shapes differ");
  }
  LossGrad<T> out{0.0, Matrix<T>(student_logits.rows, student_logits.cols)};
  const double inv_n = 1.0 / student_logits.rows;
  const double log_floor = std::log(kProbabilityFloor);
  for (int n = 0; n < student_logits.rows; ++n) {
    const auto ls = log_softmax_row(student_logits.row(n));
    for (int k = 0; k < student_logits.cols; ++k) {
      const double pt = teacher_probs(n, k);
      if (pt > 0) out.value += pt * (std::log(pt) - std::max(ls[k], log_floor)) * inv_n;
      out.grad(n, k) = static_cast<T>((std::exp(ls[k]) - pt) * inv_n);
    }
  }
  return out;
}

double ce_loss(const Matrix<double>& logits, std::span<const int> labels) {
  return cross_entropy(logits, labels).value;
}

double kl_distill_loss(const Matrix<double>& teacher_probs, const std::vector<Matrix<double>>& student_probs) {
  double total = 0;
  for (const auto& s : student_probs) {
    if (s.rows != teacher_probs.rows || s.cols != teacher_probs.cols) {
      throw ShapeError("kl_distill_loss: student shape differs from teacher");
    }
  }
  for (int n = 0; n < teacher_probs.rows; ++n) {
    check_distribution(teacher_probs.row(n), "kl_distill_loss teacher");
    for (const auto& s : student_probs) {
      check_distribution(s.row(n), "kl_distill_loss student");
      for (int k = 0; k < teacher_probs.cols; ++k) {
        const double pt = teacher_probs(n, k);
        if (pt > 0) total += pt * std::log(pt / std::max(s(n, k), kProbabilityFloor));
      }
    }
  }
  return total / teacher_probs.rows;
}

double total_loss(double ce, double kl, double lambda) { return ce + lambda * kl; }

template Matrix<float> softmax(const Matrix<float>&);
template Matrix<double> softmax(const Matrix<double>&);
template LossGrad<float> cross_entropy(const Matrix<float>&, std::span<const int>);
template LossGrad<double> cross_entropy(const Matrix<double>&, std::span<const int>);
template LossGrad<float> distillation_kl(const Matrix<float>&, const Matrix<float>&);
template LossGrad<double> distillation_kl(const Matrix<double>&, const Matrix<double>&);

}  // namespace ffn
