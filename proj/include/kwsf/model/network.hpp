#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "kwsf/nn/ops.hpp"
#include "kwsf/nn/params.hpp"

namespace kwsf::model {

using nn::Mode;
using nn::ParameterSet;
using nn::Tensor;

struct NetworkConfig {
  std::size_t n_blocks = 5;
  std::vector<std::size_t> channels = {32, 64, 128, 256, 512};
  std::size_t kernel_h = 3;
  std::size_t kernel_w = 3;
  std::size_t fc_hidden = 512;
  std::size_t n_classes = 12;
  double dropout_rate = 0.1;  // live: read at every forward
  std::size_t input_height = 40;  // n_mels
  std::size_t input_width = 98;   // n_frames
  // Identity skip around a sub-block whose input and output widths match.
  bool residual = true;
  double bn_momentum = 0.1;
  double bn_epsilon = 1e-5;

  // Throws kConfig, e.g. when pooling would collapse a spatial axis to 0.
  void validate() const;

  // (height, width) at the input and after each block.
  std::vector<std::pair<std::size_t, std::size_t>> spatial_trajectory() const;
  std::size_t flatten_size() const;

  bool operator==(const NetworkConfig&) const = default;
};

// Reference configurations: the five-block network and a shallow edge
// variant whose checkpoints are ~150x smaller.
NetworkConfig full_config();
NetworkConfig edge_config();

// He-uniform conv/linear weights, zero biases and offsets, unit BN scales,
// running mean 0 / variance 1. Deterministic under seed.
template <typename T>
ParameterSet<T> build_network(const NetworkConfig& config, std::uint64_t init_seed);

// Exact scalar count of build_network(config), running statistics included.
std::size_t param_count(const NetworkConfig& config);
// Trainable scalars only (what the optimizer keeps moments for).
std::size_t trainable_param_count(const NetworkConfig& config);
std::size_t conv_param_count(std::size_t in_channels, std::size_t out_channels, std::size_t kh, std::size_t kw,
                             bool bias);

// --- attention sub-block ---

template <typename T>
struct SubBlockParams {
  const Tensor<T>& filter_weight;
  const Tensor<T>& filter_bias;
  const Tensor<T>& gate_weight;
  const Tensor<T>& gate_bias;
  const Tensor<T>& bn_scale;
  const Tensor<T>& bn_offset;
  const Tensor<T>& bn_running_mean;
  const Tensor<T>& bn_running_var;
};

template <typename T>
SubBlockParams<T> subblock_params(const ParameterSet<T>& params, const std::string& prefix);

template <typename T>
struct SubBlockCache {
  Tensor<T> input;
  Tensor<T> filter_pre;   // conv_f(x) before ReLU
  Tensor<T> filter_act;   // relu(conv_f(x))
  Tensor<T> gate;         // sigmoid(conv_g(x))
  nn::BatchNormCache<T> bn;
  Tensor<T> dropout_mask;
  bool residual = false;
};

struct SubBlockOptions {
  Mode mode = Mode::kEval;
  double dropout_rate = 0.0;
  std::uint64_t dropout_seed = 0;
  bool residual = false;
  double bn_momentum = 0.1;
  double bn_epsilon = 1e-5;
};

// out = dropout(batch_norm(relu(conv_f(x)) * sigmoid(conv_g(x)))) [+ x]
template <typename T>
Tensor<T> attention_subblock_forward(const Tensor<T>& x, const SubBlockParams<T>& p, const SubBlockOptions& options,
                                     SubBlockCache<T>* cache = nullptr);

template <typename T>
struct SubBlockGrads {
  Tensor<T> input, filter_weight, filter_bias, gate_weight, gate_bias, bn_scale, bn_offset;
};

template <typename T>
SubBlockGrads<T> attention_subblock_backward(const Tensor<T>& grad_output, const SubBlockParams<T>& p,
                                             const SubBlockCache<T>& cache, bool need_input_grad = true);

// --- whole network ---

struct ForwardOptions {
  Mode mode = Mode::kEval;
  std::uint64_t seed = 0;  // dropout streams
};

template <typename T>
struct ForwardCache {
  std::vector<SubBlockCache<T>> subblocks;
  std::vector<nn::Shape> pool_input_shapes;
  std::vector<std::vector<std::uint32_t>> pool_argmax;
  Tensor<T> flat;
  Tensor<T> fc1_pre;
  Tensor<T> fc1_mask;
  Tensor<T> hidden;
};

// batch: N x 1 x input_height x input_width -> logits N x n_classes.
// In train mode batch norm uses batch statistics; running statistics only
// change through apply_running_stats.
template <typename T>
Tensor<T> forward(const ParameterSet<T>& params, const NetworkConfig& config, const Tensor<T>& batch,
                  const ForwardOptions& options, ForwardCache<T>* cache = nullptr);

// Writes d loss / d param into each trainable tensor's grad buffer.
template <typename T>
void backward(ParameterSet<T>& params, const NetworkConfig& config, const ForwardCache<T>& cache,
              const Tensor<T>& grad_logits);

// Folds the batch statistics recorded in a train-mode cache into the
// running statistics.
template <typename T>
void apply_running_stats(ParameterSet<T>& params, const NetworkConfig& config, const ForwardCache<T>& cache);

std::string subblock_prefix(std::size_t block, std::size_t sub);

}  // namespace kwsf::model
