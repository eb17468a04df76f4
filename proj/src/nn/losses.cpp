#include "kwsf/nn/losses.hpp"

#include <cmath>

#include "kwsf/nn/ops.hpp"

namespace kwsf::nn {

template <typename T>
LossResult<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  require(logits.rank() == 2 && logits.dim(0) == labels.size(), ErrorCode::kShape,
          "cross_entropy: need N x K logits and N labels");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  require(n > 0, ErrorCode::kShape, "cross_entropy: empty batch");
  for (int y : labels) {
    require(y >= 0 && static_cast<std::size_t>(y) < k, ErrorCode::kInvalidArgument,
            "cross_entropy: label " + std::to_string(y) + " out of range");
  }
  const Tensor<T> logp = log_softmax(logits);
  LossResult<T> r;
  r.grad = Tensor<T>(logits.shape());
  const T inv_n = T{1} / static_cast<T>(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto y = static_cast<std::size_t>(labels[i]);
    total -= logp[i * k + y];
    for (std::size_t j = 0; j < k; ++j) {
      const T p = std::exp(logp[i * k + j]);
      r.grad[i * k + j] = (p - (j == y ? T{1} : T{0})) * inv_n;
    }
  }
  r.loss = total / static_cast<double>(n);
  if (!std::isfinite(r.loss)) fail(ErrorCode::kDiverged, "cross_entropy: non-finite loss");
  return r;
}

template <typename T>
LossResult<T> kl_consistency(const Tensor<T>& teacher_logits, const Tensor<T>& student_logits,
                             KlDirection direction) {
  check_same_shape(teacher_logits, student_logits, "kl_consistency");
  require(student_logits.rank() == 2, ErrorCode::kShape, "kl_consistency: logits must be N x K");
  const std::size_t n = student_logits.dim(0), k = student_logits.dim(1);
  require(n > 0, ErrorCode::kShape, "kl_consistency: empty batch");
  const Tensor<T> log_t = log_softmax(teacher_logits);
  const Tensor<T> log_s = log_softmax(student_logits);
  LossResult<T> r;
  r.grad = Tensor<T>(student_logits.shape());
  const T inv_n = T{1} / static_cast<T>(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t row = i * k;
    if (direction == KlDirection::kTeacherStudent) {
      double kl = 0.0;
      for (std::size_t j = 0; j < k; ++j) {
        const T pt = std::exp(log_t[row + j]);
        const T ps = std::exp(log_s[row + j]);
        if (pt > T{0}) kl += static_cast<double>(pt) * (static_cast<double>(log_t[row + j]) - log_s[row + j]);
        r.grad[row + j] = (ps - pt) * inv_n;
      }
      total += kl;
    } else {
      double kl = 0.0;
      for (std::size_t j = 0; j < k; ++j) {
        const T ps = std::exp(log_s[row + j]);
        if (ps > T{0}) kl += static_cast<double>(ps) * (static_cast<double>(log_s[row + j]) - log_t[row + j]);
      }
      for (std::size_t j = 0; j < k; ++j) {
        const T ps = std::exp(log_s[row + j]);
        r.grad[row + j] = ps * (log_s[row + j] - log_t[row + j] - static_cast<T>(kl)) * inv_n;
      }
      total += kl;
    }
  }
  r.loss = total / static_cast<double>(n);
  if (!std::isfinite(r.loss)) fail(ErrorCode::kDiverged, "kl_consistency: non-finite loss");
  return r;
}

template LossResult<float> cross_entropy(const Tensor<float>&, std::span<const int>);
template LossResult<double> cross_entropy(const Tensor<double>&, std::span<const int>);
template LossResult<float> kl_consistency(const Tensor<float>&, const Tensor<float>&, KlDirection);
template LossResult<double> kl_consistency(const Tensor<double>&, const Tensor<double>&, KlDirection);

}  // namespace kwsf::nn
