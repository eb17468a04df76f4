#pragma once

// Finite-difference gradient checks shared by the unit tests and the
// acceptance runner. Every check builds a scalar L = sum(out * R) with a
// fixed random R, so the upstream gradient is R.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "kwsf/model/network.hpp"
#include "kwsf/nn/losses.hpp"
#include "kwsf/nn/ops.hpp"
#include "kwsf/random.hpp"

namespace kwsf::test {

using nn::Shape;
using nn::Tensor;
using TensorD = Tensor<double>;

struct GradReport {
  std::string op;
  std::size_t cases = 0;
  double max_rel_error = 0.0;
};

inline TensorD random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  TensorD t(shape);
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

inline double weighted_sum(const TensorD& out, const TensorD& r) {
  double s = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * r[i];
  return s;
}

// Per-element |a - n| / max(|a|, |n|, floor); floor keeps exact zeros from
// dividing by nothing.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Central differences of `loss` with respect to every entry of `x`.
inline double max_fd_error(TensorD& x, const TensorD& analytic, const std::function<double()>& loss,
                           double eps = 1e-5) {
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + eps;
    const double up = loss();
    x[i] = saved - eps;
    const double down = loss();
    x[i] = saved;
    worst = std::max(worst, relative_error(analytic[i], (up - down) / (2.0 * eps)));
  }
  return worst;
}

inline GradReport check_conv2d(std::uint64_t seed) {
  GradReport rep{"conv2d"};
  const std::vector<std::array<std::size_t, 6>> shapes = {
      {2, 3, 5, 5, 4, 3}, {1, 1, 4, 6, 2, 3}, {3, 2, 3, 3, 1, 1}, {1, 2, 6, 4, 3, 5}, {2, 1, 7, 3, 2, 3}};
  Rng rng(seed);
  for (const auto& [n, c, h, w, o, k] : shapes) {
    TensorD x = random_tensor({n, c, h, w}, rng);
    TensorD ker = random_tensor({o, c, k, k}, rng);
    TensorD b = random_tensor({o}, rng);
    const TensorD r = random_tensor({n, o, h, w}, rng);
    auto loss = [&] { return weighted_sum(nn::conv2d_forward(x, ker, &b), r); };
    const auto g = nn::conv2d_backward(x, ker, r, true);
    rep.max_rel_error = std::max({rep.max_rel_error, max_fd_error(x, g.input, loss),
                                  max_fd_error(ker, g.kernel, loss), max_fd_error(b, g.bias, loss)});
    ++rep.cases;
  }
  return rep;
}

inline GradReport check_pointwise(std::uint64_t seed) {
  GradReport rep{"relu/sigmoid/mul"};
  const std::vector<Shape> shapes = {{7}, {2, 3}, {2, 2, 3, 3}, {1, 4, 2, 5}, {3, 1, 1, 6}};
  Rng rng(seed);
  for (const auto& s : shapes) {
    // Keep relu inputs away from the kink.
    TensorD x = random_tensor(s, rng);
    for (double& v : x.values()) v += v >= 0.0 ? 0.05 : -0.05;
    TensorD y = random_tensor(s, rng);
    const TensorD r = random_tensor(s, rng);
    auto relu_loss = [&] { return weighted_sum(nn::relu(x), r); };
    auto sig_loss = [&] { return weighted_sum(nn::sigmoid(x), r); };
    auto mul_loss = [&] { return weighted_sum(nn::elementwise_mul(x, y), r); };
    const auto g_relu = nn::relu_backward(x, r);
    const auto g_sig = nn::sigmoid_backward(nn::sigmoid(x), r);
    const auto g_mul_x = nn::elementwise_mul(y, r);
    const auto g_mul_y = nn::elementwise_mul(x, r);
    rep.max_rel_error = std::max({rep.max_rel_error, max_fd_error(x, g_relu, relu_loss),
                                  max_fd_error(x, g_sig, sig_loss), max_fd_error(x, g_mul_x, mul_loss),
                                  max_fd_error(y, g_mul_y, mul_loss)});
    ++rep.cases;
  }
  return rep;
}

inline GradReport check_batch_norm(std::uint64_t seed) {
  GradReport rep{"batch_norm"};
  const std::vector<Shape> shapes = {{2, 3, 2, 2}, {4, 1, 3, 3}, {3, 2, 1, 5}, {2, 4, 3, 1}, {5, 3}};
  Rng rng(seed);
  for (const auto& s : shapes) {
    const std::size_t c = s[1];
    TensorD x = random_tensor(s, rng, -2.0, 2.0);
    TensorD scale = random_tensor({c}, rng, 0.5, 1.5);
    TensorD offset = random_tensor({c}, rng);
    const TensorD rm({c}, 0.0), rv({c}, 1.0);
    const TensorD r = random_tensor(s, rng);
    const nn::BatchNormOptions opt{nn::Mode::kTrain};
    auto loss = [&] { return weighted_sum(nn::batch_norm_forward(x, scale, offset, rm, rv, opt), r); };
    nn::BatchNormCache<double> cache;
    nn::batch_norm_forward(x, scale, offset, rm, rv, opt, &cache);
    const auto g = nn::batch_norm_backward(r, scale, cache);
    rep.max_rel_error = std::max({rep.max_rel_error, max_fd_error(x, g.input, loss),
                                  max_fd_error(scale, g.scale, loss), max_fd_error(offset, g.offset, loss)});
    ++rep.cases;
  }
  return rep;
}

inline GradReport check_dropout(std::uint64_t seed) {
  GradReport rep{"dropout"};
  const std::vector<Shape> shapes = {{10}, {3, 4}, {2, 2, 3, 3}, {1, 3, 4, 2}, {4, 1, 1, 5}};
  Rng rng(seed);
  for (const auto& s : shapes) {
    TensorD x = random_tensor(s, rng);
    const TensorD r = random_tensor(s, rng);
    const std::uint64_t mask_seed = rng.next_u64();
    auto loss = [&] { return weighted_sum(nn::dropout(x, 0.3, nn::Mode::kTrain, mask_seed), r); };
    TensorD mask;
    nn::dropout(x, 0.3, nn::Mode::kTrain, mask_seed, &mask);
    rep.max_rel_error = std::max(rep.max_rel_error, max_fd_error(x, nn::elementwise_mul(mask, r), loss));
    ++rep.cases;
  }
  return rep;
}

inline GradReport check_maxpool(std::uint64_t seed) {
  GradReport rep{"maxpool2"};
  const std::vector<Shape> shapes = {{1, 1, 6, 6}, {2, 3, 4, 4}, {1, 2, 5, 7}, {2, 1, 3, 2}, {1, 1, 2, 9}};
  Rng rng(seed);
  for (const auto& s : shapes) {
    TensorD x = random_tensor(s, rng);
    std::vector<std::uint32_t> argmax;
    const auto out = nn::maxpool2_forward(x, &argmax);
    const TensorD r = random_tensor(out.shape(), rng);
    auto loss = [&] { return weighted_sum(nn::maxpool2_forward(x), r); };
    rep.max_rel_error = std::max(rep.max_rel_error, max_fd_error(x, nn::maxpool2_backward(s, argmax, r), loss));
    ++rep.cases;
  }
  return rep;
}

inline GradReport check_linear(std::uint64_t seed) {
  GradReport rep{"linear"};
  const std::vector<std::pair<std::size_t, std::pair<std::size_t, std::size_t>>> shapes = {
      {1, {3, 2}}, {4, {5, 3}}, {2, {1, 6}}, {3, {7, 1}}, {5, {4, 12}}};
  Rng rng(seed);
  for (const auto& [n, dk] : shapes) {
    const auto [d, k] = dk;
    TensorD x = random_tensor({n, d}, rng);
    TensorD w = random_tensor({d, k}, rng);
    TensorD b = random_tensor({k}, rng);
    const TensorD r = random_tensor({n, k}, rng);
    auto loss = [&] { return weighted_sum(nn::linear_forward(x, w, b), r); };
    const auto g = nn::linear_backward(x, w, r);
    rep.max_rel_error = std::max({rep.max_rel_error, max_fd_error(x, g.input, loss), max_fd_error(w, g.weight, loss),
                                  max_fd_error(b, g.bias, loss)});
    ++rep.cases;
  }
  return rep;
}

inline GradReport check_cross_entropy(std::uint64_t seed) {
  GradReport rep{"cross_entropy"};
  const std::vector<std::pair<std::size_t, std::size_t>> shapes = {{1, 2}, {3, 12}, {5, 4}, {2, 7}, {8, 3}};
  Rng rng(seed);
  for (const auto& [n, k] : shapes) {
    TensorD logits = random_tensor({n, k}, rng, -3.0, 3.0);
    std::vector<int> labels(n);
    for (auto& y : labels) y = static_cast<int>(rng.index(k));
    auto loss = [&] { return nn::cross_entropy(logits, std::span<const int>(labels)).loss; };
    const auto res = nn::cross_entropy(logits, std::span<const int>(labels));
    rep.max_rel_error = std::max(rep.max_rel_error, max_fd_error(logits, res.grad, loss));
    ++rep.cases;
  }
  return rep;
}

inline GradReport check_kl(std::uint64_t seed) {
  GradReport rep{"kl_consistency"};
  const std::vector<std::pair<std::size_t, std::size_t>> shapes = {{1, 2}, {3, 12}, {5, 4}, {2, 7}, {8, 3}};
  Rng rng(seed);
  for (const auto dir : {nn::KlDirection::kTeacherStudent, nn::KlDirection::kStudentTeacher}) {
    for (const auto& [n, k] : shapes) {
      const TensorD teacher = random_tensor({n, k}, rng, -3.0, 3.0);
      TensorD student = random_tensor({n, k}, rng, -3.0, 3.0);
      auto loss = [&] { return nn::kl_consistency(teacher, student, dir).loss; };
      const auto res = nn::kl_consistency(teacher, student, dir);
      rep.max_rel_error = std::max(rep.max_rel_error, max_fd_error(student, res.grad, loss));
      ++rep.cases;
    }
  }
  return rep;
}

// Gated sub-block in train mode (batch statistics, frozen dropout mask).
inline GradReport check_subblock(std::uint64_t seed) {
  GradReport rep{"attention_subblock"};
  struct Case {
    std::size_t n, c_in, c_out, h, w;
    bool residual;
    double dropout;
  };
  const std::vector<Case> cases = {{2, 1, 2, 4, 4, false, 0.0},
                                   {2, 2, 2, 3, 5, true, 0.0},
                                   {3, 2, 3, 4, 3, false, 0.25},
                                   {2, 3, 3, 3, 3, true, 0.2},
                                   {4, 1, 1, 2, 6, true, 0.1}};
  Rng rng(seed);
  for (const auto& cs : cases) {
    nn::ParameterSet<double> params;
    params.add("s.filter.weight", random_tensor({cs.c_out, cs.c_in, 3, 3}, rng));
    params.add("s.filter.bias", random_tensor({cs.c_out}, rng, -0.2, 0.2));
    params.add("s.gate.weight", random_tensor({cs.c_out, cs.c_in, 3, 3}, rng));
    params.add("s.gate.bias", random_tensor({cs.c_out}, rng, -0.2, 0.2));
    params.add("s.bn.scale", random_tensor({cs.c_out}, rng, 0.5, 1.5));
    params.add("s.bn.offset", random_tensor({cs.c_out}, rng, -0.5, 0.5));
    params.add("s.bn.running_mean", TensorD({cs.c_out}, 0.0), false);
    params.add("s.bn.running_var", TensorD({cs.c_out}, 1.0), false);
    TensorD x = random_tensor({cs.n, cs.c_in, cs.h, cs.w}, rng);
    model::SubBlockOptions opt;
    opt.mode = nn::Mode::kTrain;
    opt.dropout_rate = cs.dropout;
    opt.dropout_seed = rng.next_u64();
    opt.residual = cs.residual;
    const TensorD r = random_tensor({cs.n, cs.c_out, cs.h, cs.w}, rng);
    auto loss = [&] {
      return weighted_sum(model::attention_subblock_forward(x, model::subblock_params(params, "s"), opt), r);
    };
    model::SubBlockCache<double> cache;
    model::attention_subblock_forward(x, model::subblock_params(params, "s"), opt, &cache);
    const auto g = model::attention_subblock_backward(r, model::subblock_params(params, "s"), cache);
    rep.max_rel_error = std::max({rep.max_rel_error, max_fd_error(x, g.input, loss),
                                  max_fd_error(params.get("s.filter.weight"), g.filter_weight, loss),
                                  max_fd_error(params.get("s.filter.bias"), g.filter_bias, loss),
                                  max_fd_error(params.get("s.gate.weight"), g.gate_weight, loss),
                                  max_fd_error(params.get("s.gate.bias"), g.gate_bias, loss),
                                  max_fd_error(params.get("s.bn.scale"), g.bn_scale, loss),
                                  max_fd_error(params.get("s.bn.offset"), g.bn_offset, loss)});
    ++rep.cases;
  }
  return rep;
}

// Whole network on a tiny config, cross-entropy on top.
inline GradReport check_network(std::uint64_t seed) {
  GradReport rep{"network"};
  model::NetworkConfig cfg;
  cfg.n_blocks = 2;
  cfg.channels = {2, 2};
  cfg.fc_hidden = 5;
  cfg.input_height = 8;
  cfg.input_width = 6;
  cfg.dropout_rate = 0.2;
  auto params = model::build_network<double>(cfg, seed);
  Rng rng(seed + 1);
  const TensorD batch = random_tensor({3, 1, 8, 6}, rng);
  const std::vector<int> labels = {1, 7, 11};
  const model::ForwardOptions opt{nn::Mode::kTrain, seed + 2};
  auto loss = [&] {
    return nn::cross_entropy(model::forward(params, cfg, batch, opt), std::span<const int>(labels)).loss;
  };
  model::ForwardCache<double> cache;
  const auto logits = model::forward(params, cfg, batch, opt, &cache);
  params.zero_grad();
  model::backward(params, cfg, cache, nn::cross_entropy(logits, std::span<const int>(labels)).grad);
  for (auto& p : params) {
    if (!p.trainable) continue;
    TensorD analytic(p.tensor.shape(), std::vector<double>(p.tensor.grad().begin(), p.tensor.grad().end()));
    rep.max_rel_error = std::max(rep.max_rel_error, max_fd_error(p.tensor, analytic, loss));
    ++rep.cases;
  }
  return rep;
}

inline std::vector<GradReport> gradient_suite(std::uint64_t seed) {
  return {check_conv2d(seed),         check_pointwise(seed + 1), check_batch_norm(seed + 2),
          check_dropout(seed + 3),    check_maxpool(seed + 4),   check_linear(seed + 5),
          check_cross_entropy(seed + 6), check_kl(seed + 7),     check_subblock(seed + 8),
          check_network(seed + 9)};
}

}  // namespace kwsf::test
