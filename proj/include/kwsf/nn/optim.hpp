#pragma once

#include <cstdint>
#include <vector>

#include "kwsf/nn/params.hpp"

namespace kwsf::nn {

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEpsilon = 1e-8;

// Moments are indexed like the parameter set; non-trainable slots stay empty.
template <typename T>
struct AdamState {
  std::vector<Tensor<T>> first_moment;
  std::vector<Tensor<T>> second_moment;
  std::uint64_t step = 0;
  double learning_rate = 1e-3;  // read at every step, so it can change between steps

  static AdamState for_params(const ParameterSet<T>& params, double learning_rate);
  bool matches(const ParameterSet<T>& params) const;
};

// One bias-corrected Adam update using each trainable tensor's grad buffer.
// A non-finite gradient raises kDiverged before anything is modified.
template <typename T>
void adam_step(ParameterSet<T>& params, AdamState<T>& state);

// teacher <- decay * teacher + (1 - decay) * student over every tensor,
// batch-norm running statistics included.
template <typename T>
void ema_update(ParameterSet<T>& teacher, const ParameterSet<T>& student, double decay);

}  // namespace kwsf::nn
