#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "kwsf/nn/tensor.hpp"

// Layer primitives. Each op has a forward and a backward; backward takes the
// upstream gradient plus whatever forward state it needs and returns the
// input gradient (and parameter gradients where the op has parameters).
namespace kwsf::nn {

enum class Mode { kTrain, kEval };

// --- conv2d: stride 1, "same" zero padding, odd kernel sizes ---

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>* bias = nullptr);

template <typename T>
struct Conv2dGrads {
  Tensor<T> input;
  Tensor<T> kernel;
  Tensor<T> bias;  // empty when the forward had no bias
};

template <typename T>
Conv2dGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& grad_output,
                               bool has_bias, bool need_input_grad = true);

// --- pointwise ---

template <typename T>
Tensor<T> relu(const Tensor<T>& x);
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& grad_output);

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);
// Takes the forward output y = sigmoid(x).
template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& y, const Tensor<T>& grad_output);

template <typename T>
Tensor<T> elementwise_mul(const Tensor<T>& a, const Tensor<T>& b);

// --- batch norm over N, H, W per channel (rank 4) or over N (rank 2) ---

struct BatchNormOptions {
  Mode mode = Mode::kTrain;
  double momentum = 0.1;  // running <- (1 - momentum) * running + momentum * batch
  double epsilon = 1e-5;
};

template <typename T>
struct BatchNormCache {
  Tensor<T> x_hat;              // normalized input
  std::vector<T> inv_std;       // per channel
  std::vector<T> batch_mean;    // per channel
  std::vector<T> batch_var;     // biased, per channel
  std::size_t count = 0;        // elements per channel
};

// In train mode normalizes by batch statistics and, when `cache` is given,
// records them; running statistics are not touched here (see
// update_running_stats). In eval mode uses the running statistics.
template <typename T>
Tensor<T> batch_norm_forward(const Tensor<T>& x, const Tensor<T>& scale, const Tensor<T>& offset,
                             const Tensor<T>& running_mean, const Tensor<T>& running_var,
                             const BatchNormOptions& options, BatchNormCache<T>* cache = nullptr);

template <typename T>
struct BatchNormGrads {
  Tensor<T> input, scale, offset;
};

// Train-mode backward.
template <typename T>
BatchNormGrads<T> batch_norm_backward(const Tensor<T>& grad_output, const Tensor<T>& scale,
                                      const BatchNormCache<T>& cache);

// Running stats update; the variance is stored unbiased.
template <typename T>
void update_running_stats(Tensor<T>& running_mean, Tensor<T>& running_var, const BatchNormCache<T>& cache,
                          double momentum);

// --- dropout ---

// Keep-mask already scaled by 1/(1-rate): entries are 0 or 1/(1-rate).
template <typename T>
Tensor<T> dropout_mask(const Shape& shape, double rate, std::uint64_t seed);

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, Mode mode, std::uint64_t seed, Tensor<T>* mask_out = nullptr);

// --- max pool 2x2 stride 2, floor semantics, first-index tie-break ---

template <typename T>
Tensor<T> maxpool2_forward(const Tensor<T>& x, std::vector<std::uint32_t>* argmax = nullptr);

template <typename T>
Tensor<T> maxpool2_backward(const Shape& input_shape, const std::vector<std::uint32_t>& argmax,
                            const Tensor<T>& grad_output);

// --- fully connected ---

// x: N x D, weight: D x K, bias: K.
template <typename T>
Tensor<T> linear_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

template <typename T>
struct LinearGrads {
  Tensor<T> input, weight, bias;
};

template <typename T>
LinearGrads<T> linear_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& grad_output);

// Row-wise softmax with max subtraction.
template <typename T>
Tensor<T> softmax(const Tensor<T>& logits);

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& logits);

}  // namespace kwsf::nn
