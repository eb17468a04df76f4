#include "kwsf/model/network.hpp"

#include <cmath>

#include "kwsf/random.hpp"

namespace kwsf::model {

using nn::Shape;

void NetworkConfig::validate() const {
  require(n_blocks >= 1, ErrorCode::kConfig, "network needs at least one block");
  require(channels.size() == n_blocks, ErrorCode::kConfig,
          "channels list has " + std::to_string(channels.size()) + " entries for " + std::to_string(n_blocks) +
              " blocks");
  for (std::size_t c : channels) require(c >= 1, ErrorCode::kConfig, "channel counts must be positive");
  require(kernel_h % 2 == 1 && kernel_w % 2 == 1, ErrorCode::kConfig, "kernel sizes must be odd");
  require(fc_hidden >= 1, ErrorCode::kConfig, "fc_hidden must be positive");
  require(n_classes == 12, ErrorCode::kConfig, "the output space has exactly 12 classes");
  require(dropout_rate >= 0.0 && dropout_rate < 1.0, ErrorCode::kConfig, "dropout_rate must lie in [0, 1)");
  require(input_height >= 1 && input_width >= 1, ErrorCode::kConfig, "input shape must be positive");
  require(bn_momentum >= 0.0 && bn_momentum <= 1.0 && bn_epsilon > 0.0, ErrorCode::kConfig,
          "invalid batch-norm momentum/epsilon");
  const auto traj = spatial_trajectory();
  const auto [h, w] = traj.back();
  require(h >= 1 && w >= 1, ErrorCode::kConfig,
          "spatial collapse: " + std::to_string(input_height) + "x" + std::to_string(input_width) + " input pooled " +
              std::to_string(n_blocks) + " times reaches " + std::to_string(h) + "x" + std::to_string(w));
}

std::vector<std::pair<std::size_t, std::size_t>> NetworkConfig::spatial_trajectory() const {
  std::vector<std::pair<std::size_t, std::size_t>> out{{input_height, input_width}};
  std::size_t h = input_height, w = input_width;
  for (std::size_t b = 0; b < n_blocks; ++b) {
    h /= 2;
    w /= 2;
    out.emplace_back(h, w);
  }
  return out;
}

std::size_t NetworkConfig::flatten_size() const {
  const auto [h, w] = spatial_trajectory().back();
  return channels.back() * h * w;
}

NetworkConfig full_config() { return NetworkConfig{}; }

NetworkConfig edge_config() {
  NetworkConfig c;
  c.n_blocks = 3;
  c.channels = {4, 8, 16};
  c.fc_hidden = 64;
  return c;
}

std::string subblock_prefix(std::size_t block, std::size_t sub) {
  return "block" + std::to_string(block) + ".sub" + std::to_string(sub);
}

std::size_t conv_param_count(std::size_t in_channels, std::size_t out_channels, std::size_t kh, std::size_t kw,
                             bool bias) {
  return out_channels * in_channels * kh * kw + (bias ? out_channels : 0);
}

namespace {

std::size_t count_params(const NetworkConfig& c, bool trainable_only) {
  c.validate();
  std::size_t n = 0;
  std::size_t in = 1;
  for (std::size_t b = 0; b < c.n_blocks; ++b) {
    for (std::size_t s = 0; s < 2; ++s) {
      const std::size_t out = c.channels[b];
      n += 2 * conv_param_count(in, out, c.kernel_h, c.kernel_w, true);  // filter + gate
      n += (trainable_only ? 2 : 4) * out;                               // BN scale/offset (+ running stats)
      in = out;
    }
  }
  n += c.flatten_size() * c.fc_hidden + c.fc_hidden;
  n += c.fc_hidden * c.n_classes + c.n_classes;
  return n;
}

template <typename T>
Tensor<T> he_uniform(Shape shape, std::size_t fan_in, std::uint64_t seed) {
  Tensor<T> t(std::move(shape));
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  Rng rng(seed);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

// Copies channels [first, first + count) of an N x C x H x W tensor.
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, std::size_t first, std::size_t count) {
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  Tensor<T> out({n, count, x.dim(2), x.dim(3)});
  for (std::size_t b = 0; b < n; ++b) {
    std::copy_n(x.ptr() + (b * c + first) * plane, count * plane, out.ptr() + b * count * plane);
  }
  return out;
}

// Stacks two N x C x H x W tensors along the channel axis.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  const std::size_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1), plane = a.dim(2) * a.dim(3);
  Tensor<T> out({n, ca + cb, a.dim(2), a.dim(3)});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(a.ptr() + i * ca * plane, ca * plane, out.ptr() + i * (ca + cb) * plane);
    std::copy_n(b.ptr() + i * cb * plane, cb * plane, out.ptr() + (i * (ca + cb) + ca) * plane);
  }
  return out;
}

// Filter and gate convolutions share their input, so they run as one
// convolution with stacked kernels.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> stacked_kernel(const SubBlockParams<T>& p) {
  const Shape& ks = p.filter_weight.shape();
  Tensor<T> w({2 * ks[0], ks[1], ks[2], ks[3]});
  std::copy(p.filter_weight.data().begin(), p.filter_weight.data().end(), w.ptr());
  std::copy(p.gate_weight.data().begin(), p.gate_weight.data().end(), w.ptr() + p.filter_weight.size());
  Tensor<T> b({2 * ks[0]});
  std::copy(p.filter_bias.data().begin(), p.filter_bias.data().end(), b.ptr());
  std::copy(p.gate_bias.data().begin(), p.gate_bias.data().end(), b.ptr() + ks[0]);
  return {std::move(w), std::move(b)};
}

template <typename T>
Tensor<T> flatten(const Tensor<T>& x) {
  return Tensor<T>({x.dim(0), x.size() / x.dim(0)}, x.values());
}

template <typename T>
void add_into(Tensor<T>& dst, const Tensor<T>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

template <typename T>
void set_grad(ParameterSet<T>& params, const std::string& name, const Tensor<T>& g) {
  auto& t = params.get(name);
  if (!t.has_grad()) t.zero_grad();
  auto dst = t.grad();
  require(dst.size() == g.size(), ErrorCode::kShape, "gradient size mismatch for " + name);
  std::copy(g.data().begin(), g.data().end(), dst.begin());
}

}  // namespace

std::size_t param_count(const NetworkConfig& config) { return count_params(config, false); }

std::size_t trainable_param_count(const NetworkConfig& config) { return count_params(config, true); }

template <typename T>
ParameterSet<T> build_network(const NetworkConfig& config, std::uint64_t init_seed) {
  config.validate();
  ParameterSet<T> params;
  std::uint64_t tag = 0;
  auto next_seed = [&] { return derive_seed(init_seed, {tag++}); };
  const std::size_t kh = config.kernel_h, kw = config.kernel_w;
  std::size_t in = 1;
  for (std::size_t b = 0; b < config.n_blocks; ++b) {
    const std::size_t out = config.channels[b];
    for (std::size_t s = 0; s < 2; ++s) {
      const std::string p = subblock_prefix(b, s);
      params.add(p + ".filter.weight", he_uniform<T>({out, in, kh, kw}, in * kh * kw, next_seed()));
      params.add(p + ".filter.bias", Tensor<T>({out}));
      params.add(p + ".gate.weight", he_uniform<T>({out, in, kh, kw}, in * kh * kw, next_seed()));
      params.add(p + ".gate.bias", Tensor<T>({out}));
      params.add(p + ".bn.scale", Tensor<T>({out}, T{1}));
      params.add(p + ".bn.offset", Tensor<T>({out}));
      params.add(p + ".bn.running_mean", Tensor<T>({out}), false);
      params.add(p + ".bn.running_var", Tensor<T>({out}, T{1}), false);
      in = out;
    }
  }
  const std::size_t flat = config.flatten_size();
  params.add("fc1.weight", he_uniform<T>({flat, config.fc_hidden}, flat, next_seed()));
  params.add("fc1.bias", Tensor<T>({config.fc_hidden}));
  params.add("fc2.weight", he_uniform<T>({config.fc_hidden, config.n_classes}, config.fc_hidden, next_seed()));
  params.add("fc2.bias", Tensor<T>({config.n_classes}));
  return params;
}

template <typename T>
SubBlockParams<T> subblock_params(const ParameterSet<T>& params, const std::string& prefix) {
  return {params.get(prefix + ".filter.weight"), params.get(prefix + ".filter.bias"),
          params.get(prefix + ".gate.weight"),   params.get(prefix + ".gate.bias"),
          params.get(prefix + ".bn.scale"),      params.get(prefix + ".bn.offset"),
          params.get(prefix + ".bn.running_mean"), params.get(prefix + ".bn.running_var")};
}

template <typename T>
Tensor<T> attention_subblock_forward(const Tensor<T>& x, const SubBlockParams<T>& p, const SubBlockOptions& options,
                                     SubBlockCache<T>* cache) {
  require(x.rank() == 4, ErrorCode::kShape, "sub-block input must be N x C x H x W");
  require(p.filter_weight.shape() == p.gate_weight.shape(), ErrorCode::kShape,
          "filter and gate kernels must have the same shape");
  const std::size_t out_c = p.filter_weight.dim(0);
  const auto [w, b] = stacked_kernel(p);
  const Tensor<T> z = nn::conv2d_forward(x, w, &b);
  Tensor<T> filter_pre = slice_channels(z, 0, out_c);
  Tensor<T> filter_act = nn::relu(filter_pre);
  Tensor<T> gate = nn::sigmoid(slice_channels(z, out_c, out_c));
  const Tensor<T> gated = nn::elementwise_mul(filter_act, gate);

  nn::BatchNormOptions bn_opt{options.mode, options.bn_momentum, options.bn_epsilon};
  nn::BatchNormCache<T> bn_cache;
  const Tensor<T> normed = nn::batch_norm_forward(gated, p.bn_scale, p.bn_offset, p.bn_running_mean,
                                                  p.bn_running_var, bn_opt, cache ? &bn_cache : nullptr);
  Tensor<T> mask;
  Tensor<T> out = nn::dropout(normed, options.dropout_rate, options.mode, options.dropout_seed, cache ? &mask : nullptr);
  const bool residual = options.residual && x.dim(1) == out_c;
  if (residual) add_into(out, x);
  if (cache) {
    cache->input = x;
    cache->filter_pre = std::move(filter_pre);
    cache->filter_act = std::move(filter_act);
    cache->gate = std::move(gate);
    cache->bn = std::move(bn_cache);
    cache->dropout_mask = std::move(mask);
    cache->residual = residual;
  }
  return out;
}

template <typename T>
SubBlockGrads<T> attention_subblock_backward(const Tensor<T>& grad_output, const SubBlockParams<T>& p,
                                             const SubBlockCache<T>& cache, bool need_input_grad) {
  require(!cache.bn.x_hat.empty(), ErrorCode::kInvalidArgument, "sub-block backward needs a train-mode cache");
  SubBlockGrads<T> g;
  const Tensor<T> d_normed = nn::elementwise_mul(grad_output, cache.dropout_mask);
  auto bn = nn::batch_norm_backward(d_normed, p.bn_scale, cache.bn);
  g.bn_scale = std::move(bn.scale);
  g.bn_offset = std::move(bn.offset);
  const Tensor<T>& d_gated = bn.input;
  const Tensor<T> d_filter_pre = nn::relu_backward(cache.filter_pre, nn::elementwise_mul(d_gated, cache.gate));
  const Tensor<T> d_gate_pre = nn::sigmoid_backward(cache.gate, nn::elementwise_mul(d_gated, cache.filter_act));

  const auto [w, b] = stacked_kernel(p);
  auto conv = nn::conv2d_backward(cache.input, w, concat_channels(d_filter_pre, d_gate_pre), true, need_input_grad);
  const std::size_t out_c = p.filter_weight.dim(0);
  const std::size_t half = p.filter_weight.size();
  g.filter_weight = Tensor<T>(p.filter_weight.shape(),
                              std::vector<T>(conv.kernel.values().begin(), conv.kernel.values().begin() + half));
  g.gate_weight = Tensor<T>(p.gate_weight.shape(),
                            std::vector<T>(conv.kernel.values().begin() + half, conv.kernel.values().end()));
  g.filter_bias = Tensor<T>({out_c}, std::vector<T>(conv.bias.values().begin(), conv.bias.values().begin() + out_c));
  g.gate_bias = Tensor<T>({out_c}, std::vector<T>(conv.bias.values().begin() + out_c, conv.bias.values().end()));
  if (need_input_grad) {
    g.input = std::move(conv.input);
    if (cache.residual) add_into(g.input, grad_output);
  }
  return g;
}

template <typename T>
Tensor<T> forward(const ParameterSet<T>& params, const NetworkConfig& config, const Tensor<T>& batch,
                  const ForwardOptions& options, ForwardCache<T>* cache) {
  require(batch.rank() == 4 && batch.dim(1) == 1 && batch.dim(2) == config.input_height &&
              batch.dim(3) == config.input_width,
          ErrorCode::kShape,
          "network input must be N x 1 x " + std::to_string(config.input_height) + " x " +
              std::to_string(config.input_width) + ", got " + nn::shape_string(batch.shape()));
  const bool train = options.mode == Mode::kTrain;
  if (cache) *cache = ForwardCache<T>{};
  std::uint64_t layer = 0;
  Tensor<T> x = batch;
  for (std::size_t b = 0; b < config.n_blocks; ++b) {
    for (std::size_t s = 0; s < 2; ++s) {
      SubBlockOptions opt{options.mode, config.dropout_rate, derive_seed(options.seed, {layer++}), config.residual,
                          config.bn_momentum, config.bn_epsilon};
      SubBlockCache<T>* sc = nullptr;
      if (cache) sc = &cache->subblocks.emplace_back();
      x = attention_subblock_forward(x, subblock_params(params, subblock_prefix(b, s)), opt, sc);
    }
    if (cache) {
      cache->pool_input_shapes.push_back(x.shape());
      x = nn::maxpool2_forward(x, &cache->pool_argmax.emplace_back());
    } else {
      x = nn::maxpool2_forward(x);
    }
  }
  Tensor<T> flat = flatten(x);
  Tensor<T> fc1_pre = nn::linear_forward(flat, params.get("fc1.weight"), params.get("fc1.bias"));
  Tensor<T> mask;
  Tensor<T> hidden = nn::dropout(nn::relu(fc1_pre), config.dropout_rate, options.mode,
                                 derive_seed(options.seed, {layer++}), cache ? &mask : nullptr);
  Tensor<T> logits = nn::linear_forward(hidden, params.get("fc2.weight"), params.get("fc2.bias"));
  if (cache) {
    require(train, ErrorCode::kInvalidArgument, "forward cache is only meaningful in train mode");
    cache->flat = std::move(flat);
    cache->fc1_pre = std::move(fc1_pre);
    cache->fc1_mask = std::move(mask);
    cache->hidden = std::move(hidden);
  }
  return logits;
}

template <typename T>
void backward(ParameterSet<T>& params, const NetworkConfig& config, const ForwardCache<T>& cache,
              const Tensor<T>& grad_logits) {
  require(cache.subblocks.size() == 2 * config.n_blocks, ErrorCode::kInvalidArgument,
          "backward: cache does not match the network");
  auto fc2 = nn::linear_backward(cache.hidden, params.get("fc2.weight"), grad_logits);
  set_grad(params, "fc2.weight", fc2.weight);
  set_grad(params, "fc2.bias", fc2.bias);
  const Tensor<T> d_fc1_pre = nn::relu_backward(cache.fc1_pre, nn::elementwise_mul(fc2.input, cache.fc1_mask));
  auto fc1 = nn::linear_backward(cache.flat, params.get("fc1.weight"), d_fc1_pre);
  set_grad(params, "fc1.weight", fc1.weight);
  set_grad(params, "fc1.bias", fc1.bias);

  const auto& last_pool = cache.pool_input_shapes.back();
  Tensor<T> grad({last_pool[0], last_pool[1], last_pool[2] / 2, last_pool[3] / 2}, fc1.input.values());
  for (std::size_t b = config.n_blocks; b-- > 0;) {
    grad = nn::maxpool2_backward(cache.pool_input_shapes[b], cache.pool_argmax[b], grad);
    for (std::size_t s = 2; s-- > 0;) {
      const std::string prefix = subblock_prefix(b, s);
      const bool first_layer = b == 0 && s == 0;
      auto g = attention_subblock_backward(grad, subblock_params(params, prefix), cache.subblocks[2 * b + s],
                                           !first_layer);
      set_grad(params, prefix + ".filter.weight", g.filter_weight);
      set_grad(params, prefix + ".filter.bias", g.filter_bias);
      set_grad(params, prefix + ".gate.weight", g.gate_weight);
      set_grad(params, prefix + ".gate.bias", g.gate_bias);
      set_grad(params, prefix + ".bn.scale", g.bn_scale);
      set_grad(params, prefix + ".bn.offset", g.bn_offset);
      if (!first_layer) grad = std::move(g.input);
    }
  }
}

template <typename T>
void apply_running_stats(ParameterSet<T>& params, const NetworkConfig& config, const ForwardCache<T>& cache) {
  require(cache.subblocks.size() == 2 * config.n_blocks, ErrorCode::kInvalidArgument,
          "apply_running_stats: cache does not match the network");
  for (std::size_t b = 0; b < config.n_blocks; ++b) {
    for (std::size_t s = 0; s < 2; ++s) {
      const std::string prefix = subblock_prefix(b, s);
      nn::update_running_stats(params.get(prefix + ".bn.running_mean"), params.get(prefix + ".bn.running_var"),
                               cache.subblocks[2 * b + s].bn, config.bn_momentum);
    }
  }
}

#define KWSF_INSTANTIATE_NETWORK(T)                                                                               \
  template ParameterSet<T> build_network<T>(const NetworkConfig&, std::uint64_t);                                 \
  template SubBlockParams<T> subblock_params(const ParameterSet<T>&, const std::string&);                         \
  template Tensor<T> attention_subblock_forward(const Tensor<T>&, const SubBlockParams<T>&, const SubBlockOptions&, \
                                                SubBlockCache<T>*);                                               \
  template SubBlockGrads<T> attention_subblock_backward(const Tensor<T>&, const SubBlockParams<T>&,               \
                                                        const SubBlockCache<T>&, bool);                           \
  template Tensor<T> forward(const ParameterSet<T>&, const NetworkConfig&, const Tensor<T>&,                      \
                             const ForwardOptions&, ForwardCache<T>*);                                            \
  template void backward(ParameterSet<T>&, const NetworkConfig&, const ForwardCache<T>&, const Tensor<T>&);       \
  template void apply_running_stats(ParameterSet<T>&, const NetworkConfig&, const ForwardCache<T>&);

KWSF_INSTANTIATE_NETWORK(float)
KWSF_INSTANTIATE_NETWORK(double)

}  // namespace kwsf::model
