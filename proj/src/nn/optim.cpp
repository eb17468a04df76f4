#include "kwsf/nn/optim.hpp"

#include <cmath>

namespace kwsf::nn {

template <typename T>
AdamState<T> AdamState<T>::for_params(const ParameterSet<T>& params, double learning_rate) {
  require(learning_rate > 0.0, ErrorCode::kInvalidArgument, "learning rate must be positive");
  AdamState<T> s;
  s.learning_rate = learning_rate;
  for (const auto& p : params) {
    s.first_moment.emplace_back(p.trainable ? Tensor<T>(p.tensor.shape()) : Tensor<T>());
    s.second_moment.emplace_back(p.trainable ? Tensor<T>(p.tensor.shape()) : Tensor<T>());
  }
  return s;
}

template <typename T>
bool AdamState<T>::matches(const ParameterSet<T>& params) const {
  if (first_moment.size() != params.size() || second_moment.size() != params.size()) return false;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Shape expect = params[i].trainable ? params[i].tensor.shape() : Shape{};
    const Shape& m = first_moment[i].empty() ? Shape{} : first_moment[i].shape();
    const Shape& v = second_moment[i].empty() ? Shape{} : second_moment[i].shape();
    if (params[i].trainable ? (m != expect || v != expect) : (!first_moment[i].empty() || !second_moment[i].empty())) {
      return false;
    }
  }
  return true;
}

template <typename T>
void adam_step(ParameterSet<T>& params, AdamState<T>& state) {
  require(state.matches(params), ErrorCode::kShape, "adam_step: optimizer state does not match parameters");
  require(state.learning_rate > 0.0 && std::isfinite(state.learning_rate), ErrorCode::kInvalidArgument,
          "adam_step: learning rate must be positive");
  for (const auto& p : params) {
    if (!p.trainable || !p.tensor.has_grad()) continue;
    for (T g : p.tensor.grad()) {
      if (!std::isfinite(g)) fail(ErrorCode::kDiverged, "adam_step: non-finite gradient in '" + p.name + "'");
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const auto b1 = static_cast<T>(kAdamBeta1);
  const auto b2 = static_cast<T>(kAdamBeta2);
  const auto c1 = static_cast<T>(1.0 - std::pow(kAdamBeta1, t));
  const auto c2 = static_cast<T>(1.0 - std::pow(kAdamBeta2, t));
  const auto lr = static_cast<T>(state.learning_rate);
  const auto eps = static_cast<T>(kAdamEpsilon);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (!p.trainable || !p.tensor.has_grad()) continue;
    auto value = p.tensor.data();
    auto grad = p.tensor.grad();
    auto m = state.first_moment[i].data();
    auto v = state.second_moment[i].data();
    for (std::size_t j = 0; j < value.size(); ++j) {
      const T g = grad[j];
      m[j] = b1 * m[j] + (T{1} - b1) * g;
      v[j] = b2 * v[j] + (T{1} - b2) * g * g;
      const T m_hat = m[j] / c1;
      const T v_hat = v[j] / c2;
      value[j] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

template <typename T>
void ema_update(ParameterSet<T>& teacher, const ParameterSet<T>& student, double decay) {
  require(teacher.same_schema(student), ErrorCode::kShape, "ema_update: teacher/student schema mismatch");
  require(decay >= 0.0 && decay <= 1.0, ErrorCode::kInvalidArgument, "ema_update: decay must lie in [0, 1]");
  const auto d = static_cast<T>(decay);
  const auto rest = static_cast<T>(1.0 - decay);
  for (std::size_t i = 0; i < teacher.size(); ++i) {
    auto t = teacher[i].tensor.data();
    auto s = student[i].tensor.data();
    for (std::size_t j = 0; j < t.size(); ++j) t[j] = d * t[j] + rest * s[j];
  }
}

template struct AdamState<float>;
template struct AdamState<double>;
template void adam_step(ParameterSet<float>&, AdamState<float>&);
template void adam_step(ParameterSet<double>&, AdamState<double>&);
template void ema_update(ParameterSet<float>&, const ParameterSet<float>&, double);
template void ema_update(ParameterSet<double>&, const ParameterSet<double>&, double);

}  // namespace kwsf::nn
