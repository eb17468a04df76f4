#include <doctest.h>

#include "common/gradcheck.hpp"
#include "kwsf/error.hpp"
#include "kwsf/model/checkpoint.hpp"
#include "kwsf/model/network.hpp"

using namespace kwsf;
using namespace kwsf::model;
using kwsf::test::random_tensor;
using kwsf::test::TensorD;

namespace {

NetworkConfig tiny_config() {
  NetworkConfig c;
  c.n_blocks = 2;
  c.channels = {3, 4};
  c.fc_hidden = 6;
  c.input_height = 8;
  c.input_width = 10;
  return c;
}

nn::ParameterSet<double> subblock_set(std::size_t c_in, std::size_t c_out, Rng& rng) {
  nn::ParameterSet<double> ps;
  ps.add("s.filter.weight", random_tensor({c_out, c_in, 3, 3}, rng));
  ps.add("s.filter.bias", random_tensor({c_out}, rng));
  ps.add("s.gate.weight", random_tensor({c_out, c_in, 3, 3}, rng));
  ps.add("s.gate.bias", random_tensor({c_out}, rng));
  ps.add("s.bn.scale", TensorD({c_out}, 1.0));
  ps.add("s.bn.offset", TensorD({c_out}, 0.0));
  ps.add("s.bn.running_mean", TensorD({c_out}, 0.0), false);
  ps.add("s.bn.running_var", TensorD({c_out}, 1.0), false);
  return ps;
}

}  // namespace

TEST_CASE("subblock: open gate halves the filter path, closed gate shuts it") {
  Rng rng(1);
  auto ps = subblock_set(2, 3, rng);
  const TensorD x = random_tensor({2, 2, 4, 5}, rng);
  SubBlockOptions opt;  // eval, no dropout, no residual
  ps.get("s.gate.weight").fill(0.0);
  ps.get("s.gate.bias").fill(0.0);
  SubBlockCache<double> cache;
  opt.mode = nn::Mode::kTrain;
  model::attention_subblock_forward(x, subblock_params(ps, "s"), opt, &cache);
  for (double g : cache.gate.values()) CHECK(g == 0.5);

  opt.mode = nn::Mode::kEval;
  const auto out = attention_subblock_forward(x, subblock_params(ps, "s"), opt);
  const auto filter = nn::relu(nn::conv2d_forward(x, ps.get("s.filter.weight"), &ps.get("s.filter.bias")));
  const double bn = 1.0 / std::sqrt(1.0 + 1e-5);
  for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == doctest::Approx(0.5 * filter[i] * bn).epsilon(1e-12));

  ps.get("s.gate.bias").fill(-50.0);
  const auto closed = attention_subblock_forward(x, subblock_params(ps, "s"), opt);
  for (double v : closed.values()) CHECK(std::abs(v) < 1e-12);
}

TEST_CASE("subblock: gate activations lie in (0, 1)") {
  Rng rng(2);
  auto ps = subblock_set(1, 4, rng);
  const TensorD x = random_tensor({3, 1, 5, 5}, rng, -3.0, 3.0);
  SubBlockOptions opt;
  opt.mode = nn::Mode::kTrain;
  SubBlockCache<double> cache;
  attention_subblock_forward(x, subblock_params(ps, "s"), opt, &cache);
  for (double g : cache.gate.values()) {
    CHECK(g > 0.0);
    CHECK(g < 1.0);
  }
}

TEST_CASE("subblock: gradient check") {
  const auto rep = test::check_subblock(77);
  CHECK(rep.cases >= 5);
  CHECK(rep.max_rel_error < 1e-4);
}

TEST_CASE("config: spatial trajectory and errors") {
  const auto full = full_config();
  const auto traj = full.spatial_trajectory();
  const std::vector<std::pair<std::size_t, std::size_t>> expected = {{40, 98}, {20, 49}, {10, 24},
                                                                     {5, 12},  {2, 6},   {1, 3}};
  CHECK(traj == expected);
  CHECK(full.flatten_size() == 512 * 3);

  // Closed-form floor halving for other shapes.
  for (std::size_t h : {8u, 13u, 40u}) {
    for (std::size_t blocks : {1u, 2u, 3u}) {
      NetworkConfig c;
      c.n_blocks = blocks;
      c.channels.assign(blocks, 2);
      c.input_height = h;
      c.input_width = 21;
      c.validate();
      const auto t = c.spatial_trajectory();
      for (std::size_t b = 0; b <= blocks; ++b) {
        CHECK(t[b].first == h / (std::size_t{1} << b));
        CHECK(t[b].second == 21 / (std::size_t{1} << b));
      }
    }
  }

  NetworkConfig six;
  six.n_blocks = 6;
  six.channels = {2, 2, 2, 2, 2, 2};
  try {
    six.validate();
    FAIL("expected config error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kConfig);
  }
  CHECK_THROWS_AS(build_network<float>(six, 1), Error);

  NetworkConfig mismatch;
  mismatch.channels = {8, 8};
  CHECK_THROWS_AS(mismatch.validate(), Error);
  NetworkConfig classes;
  classes.n_classes = 10;
  CHECK_THROWS_AS(classes.validate(), Error);
  NetworkConfig even;
  even.kernel_h = 2;
  CHECK_THROWS_AS(even.validate(), Error);
}

TEST_CASE("build: initialization and determinism") {
  const auto cfg = tiny_config();
  const auto a = build_network<float>(cfg, 5);
  const auto b = build_network<float>(cfg, 5);
  const auto c = build_network<float>(cfg, 6);
  CHECK(a == b);
  CHECK_FALSE(a == c);
  CHECK(a.scalar_count() == param_count(cfg));
  CHECK(a.scalar_count(true) == trainable_param_count(cfg));
  for (const auto& p : a) {
    const auto& name = p.name;
    auto ends_with = [&](std::string_view s) { return name.size() >= s.size() && name.substr(name.size() - s.size()) == s; };
    if (ends_with(".bias") || ends_with("bn.offset") || ends_with("running_mean")) {
      for (float v : p.tensor.values()) CHECK(v == 0.0f);
    } else if (ends_with("bn.scale") || ends_with("running_var")) {
      for (float v : p.tensor.values()) CHECK(v == 1.0f);
    } else {
      // He-uniform bound sqrt(6 / fan_in).
      const auto& s = p.tensor.shape();
      const double fan_in = s.size() == 4 ? static_cast<double>(s[1] * s[2] * s[3]) : static_cast<double>(s[0]);
      const double bound = std::sqrt(6.0 / fan_in);
      for (float v : p.tensor.values()) CHECK(std::abs(v) <= bound);
    }
    CHECK(p.trainable == (name.find("running") == std::string::npos));
  }
  CHECK(a.index_of("block0.sub0.filter.weight"));
  CHECK(a.index_of("block1.sub1.bn.running_var"));
  CHECK(a.index_of("fc2.bias"));
}

TEST_CASE("param counts") {
  CHECK(conv_param_count(1, 8, 3, 3, true) == 80);
  const auto full = param_count(full_config());
  const auto edge = param_count(edge_config());
  const double ratio = static_cast<double>(full) / static_cast<double>(edge);
  CHECK(ratio >= 130.0);
  CHECK(ratio <= 210.0);
  CHECK(full == build_network<float>(full_config(), 1).scalar_count());
  CHECK(edge == build_network<float>(edge_config(), 1).scalar_count());
}

TEST_CASE("forward: eval shape, purity, batch independence") {
  const auto cfg = tiny_config();
  const auto params = build_network<double>(cfg, 3);
  Rng rng(4);
  const TensorD batch = random_tensor({4, 1, 8, 10}, rng);
  const auto logits = forward(params, cfg, batch, {});
  CHECK(logits.shape() == nn::Shape{4, 12});
  CHECK(logits.all_finite());
  CHECK(forward(params, cfg, batch, {}) == logits);

  const std::vector<std::size_t> perm = {2, 0, 3, 1};
  TensorD shuffled(batch.shape());
  for (std::size_t i = 0; i < 4; ++i) {
    std::copy_n(batch.ptr() + perm[i] * 80, 80, shuffled.ptr() + i * 80);
  }
  const auto permuted = forward(params, cfg, shuffled, {});
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t k = 0; k < 12; ++k) CHECK(permuted[i * 12 + k] == doctest::Approx(logits[perm[i] * 12 + k]).epsilon(1e-12));
  }

  CHECK_THROWS_AS(forward(params, cfg, TensorD({2, 1, 8, 9}), {}), Error);
  ForwardCache<double> cache;
  CHECK_THROWS_AS(forward(params, cfg, batch, {}, &cache), Error);
}

TEST_CASE("forward: train mode seeded, dropout live") {
  auto cfg = tiny_config();
  cfg.dropout_rate = 0.3;
  const auto params = build_network<double>(cfg, 3);
  Rng rng(5);
  const TensorD batch = random_tensor({3, 1, 8, 10}, rng);
  const ForwardOptions a{nn::Mode::kTrain, 11}, b{nn::Mode::kTrain, 12};
  CHECK(forward(params, cfg, batch, a) == forward(params, cfg, batch, a));
  CHECK_FALSE(forward(params, cfg, batch, a) == forward(params, cfg, batch, b));
  cfg.dropout_rate = 0.0;
  CHECK(forward(params, cfg, batch, a) == forward(params, cfg, batch, b));
}

TEST_CASE("network: end-to-end gradient check") {
  const auto rep = test::check_network(9);
  CHECK(rep.max_rel_error < 1e-4);
}

TEST_CASE("running stats move only through apply_running_stats") {
  const auto cfg = tiny_config();
  auto params = build_network<double>(cfg, 3);
  Rng rng(6);
  const TensorD batch = random_tensor({3, 1, 8, 10}, rng, 0.0, 2.0);
  ForwardCache<double> cache;
  const auto before = params.cast<double>();
  forward(params, cfg, batch, {nn::Mode::kTrain, 1}, &cache);
  CHECK(params == before);
  apply_running_stats(params, cfg, cache);
  CHECK_FALSE(params.get("block0.sub0.bn.running_mean") == before.get("block0.sub0.bn.running_mean"));
  const auto& bn = cache.subblocks[0].bn;
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(params.get("block0.sub0.bn.running_mean")[c] == doctest::Approx(0.1 * bn.batch_mean[c]));
  }
}

TEST_CASE("edge config trains through the same code path") {
  const auto cfg = edge_config();
  auto params = build_network<float>(cfg, 1);
  Rng rng(7);
  nn::Tensor<float> batch({2, 1, cfg.input_height, cfg.input_width});
  for (float& v : batch.values()) v = static_cast<float>(rng.uniform(-1, 1));
  ForwardCache<float> cache;
  const auto logits = forward(params, cfg, batch, {nn::Mode::kTrain, 3}, &cache);
  const std::vector<int> labels = {0, 11};
  params.zero_grad();
  backward(params, cfg, cache, nn::cross_entropy(logits, std::span<const int>(labels)).grad);
  bool any_nonzero = false;
  for (const auto& p : params) {
    if (!p.trainable) continue;
    for (float g : p.tensor.grad()) any_nonzero |= g != 0.0f;
  }
  CHECK(any_nonzero);
}
