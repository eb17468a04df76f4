#pragma once

#include <span>

#include "kwsf/nn/tensor.hpp"

namespace kwsf::nn {

template <typename T>
struct LossResult {
  double loss = 0.0;
  Tensor<T> grad;  // d loss / d (student) logits
};

// Mean over the batch of -log softmax(logits)[label].
template <typename T>
LossResult<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels);

enum class KlDirection {
  kTeacherStudent,  // KL(p_teacher || p_student)
  kStudentTeacher,  // KL(p_student || p_teacher)
};

// Batch-mean KL divergence between teacher and student output distributions.
// The teacher side is a constant: only the student gradient is returned.
template <typename T>
LossResult<T> kl_consistency(const Tensor<T>& teacher_logits, const Tensor<T>& student_logits,
                             KlDirection direction = KlDirection::kTeacherStudent);

}  // namespace kwsf::nn
