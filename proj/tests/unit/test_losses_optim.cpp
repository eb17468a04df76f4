#include <doctest.h>

#include "common/gradcheck.hpp"
#include "kwsf/error.hpp"
#include "kwsf/nn/optim.hpp"

using namespace kwsf;
using namespace kwsf::nn;
using kwsf::test::random_tensor;
using kwsf::test::TensorD;

TEST_CASE("cross entropy: uniform, saturated, gradient formula, errors") {
  const std::vector<int> labels = {3, 7};
  const auto uniform = cross_entropy(TensorD({2, 12}, 0.0), std::span<const int>(labels));
  CHECK(uniform.loss == doctest::Approx(std::log(12.0)).epsilon(1e-12));
  CHECK(uniform.loss == doctest::Approx(2.4849).epsilon(1e-4));

  TensorD sharp({2, 12}, 0.0);
  sharp[3] = 50.0;
  sharp[12 + 7] = 50.0;
  CHECK(cross_entropy(sharp, std::span<const int>(labels)).loss < 1e-9);

  Rng rng(1);
  const TensorD logits = random_tensor({2, 12}, rng, -2.0, 2.0);
  const auto res = cross_entropy(logits, std::span<const int>(labels));
  const auto p = softmax(logits);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t k = 0; k < 12; ++k) {
      const double onehot = static_cast<int>(k) == labels[n] ? 1.0 : 0.0;
      CHECK(res.grad[n * 12 + k] == doctest::Approx((p[n * 12 + k] - onehot) / 2.0).epsilon(1e-12));
    }

  const std::vector<int> bad = {12, 0};
  CHECK_THROWS_AS(cross_entropy(logits, std::span<const int>(bad)), Error);
  const std::vector<int> neg = {-1, 0};
  CHECK_THROWS_AS(cross_entropy(logits, std::span<const int>(neg)), Error);
}

TEST_CASE("kl consistency: identity, closed form, Gibbs") {
  Rng rng(2);
  const TensorD a = random_tensor({4, 12}, rng, -3.0, 3.0);
  const auto same = kl_consistency(a, a);
  CHECK(same.loss == doctest::Approx(0.0).epsilon(1e-15));
  for (double g : same.grad.values()) CHECK(std::abs(g) < 1e-15);

  const TensorD teacher({1, 2}, std::vector<double>{50.0, 0.0});
  const TensorD student({1, 2}, 0.0);
  CHECK(kl_consistency(teacher, student).loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  for (int i = 0; i < 1000; ++i) {
    const TensorD t = random_tensor({1, 5}, rng, -5.0, 5.0);
    const TensorD s = random_tensor({1, 5}, rng, -5.0, 5.0);
    CHECK(kl_consistency(t, s).loss >= 0.0);
    CHECK(kl_consistency(t, s, KlDirection::kStudentTeacher).loss >= 0.0);
  }
  CHECK_THROWS_AS(kl_consistency(TensorD({1, 2}), TensorD({1, 3})), Error);
}

TEST_CASE("kl consistency: both directions against direct sums") {
  Rng rng(3);
  const TensorD t = random_tensor({3, 4}, rng, -2.0, 2.0);
  const TensorD s = random_tensor({3, 4}, rng, -2.0, 2.0);
  const auto pt = softmax(t), ps = softmax(s);
  double ts = 0.0, st = 0.0;
  for (std::size_t i = 0; i < 12; ++i) {
    ts += pt[i] * (std::log(pt[i]) - std::log(ps[i]));
    st += ps[i] * (std::log(ps[i]) - std::log(pt[i]));
  }
  CHECK(kl_consistency(t, s).loss == doctest::Approx(ts / 3.0).epsilon(1e-12));
  CHECK(kl_consistency(t, s, KlDirection::kStudentTeacher).loss == doctest::Approx(st / 3.0).epsilon(1e-12));
}

namespace {

ParameterSet<double> scalar_params(double value) {
  ParameterSet<double> ps;
  ps.add("w", TensorD({1}, value));
  return ps;
}

}  // namespace

TEST_CASE("adam: zero gradient, first step magnitude, live learning rate") {
  auto ps = scalar_params(0.7);
  auto state = AdamState<double>::for_params(ps, 1e-3);
  ps.zero_grad();
  adam_step(ps, state);
  CHECK(ps.get("w")[0] == 0.7);
  CHECK(state.step == 1);

  for (double g : {3.0, -0.02, 1e-4}) {
    auto p = scalar_params(0.7);
    auto st = AdamState<double>::for_params(p, 1e-3);
    p.zero_grad();
    p.get("w").grad()[0] = g;
    adam_step(p, st);
    // m_hat = g, v_hat = g^2, so the step is lr * |g| / (|g| + eps).
    const double expected = 1e-3 * std::abs(g) / (std::abs(g) + kAdamEpsilon);
    CHECK(std::abs(std::abs(p.get("w")[0] - 0.7) - expected) < 1e-12);
    CHECK(std::abs(std::abs(p.get("w")[0] - 0.7) - 1e-3) < 1e-6);
    CHECK((p.get("w")[0] < 0.7) == (g > 0));
  }

  // Hand-computed second step with a learning rate change in between.
  auto p = scalar_params(0.0);
  auto st = AdamState<double>::for_params(p, 1e-3);
  p.zero_grad();
  p.get("w").grad()[0] = 1.0;
  adam_step(p, st);
  st.learning_rate = 1e-2;
  p.get("w").grad()[0] = -2.0;
  adam_step(p, st);
  const double m = 0.9 * 0.1 * 1.0 + 0.1 * -2.0;
  const double v = 0.999 * 0.001 * 1.0 + 0.001 * 4.0;
  const double m_hat = m / (1.0 - 0.9 * 0.9), v_hat = v / (1.0 - 0.999 * 0.999);
  const double expected = -1e-3 / (1.0 + kAdamEpsilon) - 1e-2 * m_hat / (std::sqrt(v_hat) + kAdamEpsilon);
  CHECK(p.get("w")[0] == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("adam: non-finite gradient diverges without touching parameters") {
  auto ps = scalar_params(0.5);
  auto state = AdamState<double>::for_params(ps, 1e-3);
  ps.zero_grad();
  ps.get("w").grad()[0] = std::nan("");
  try {
    adam_step(ps, state);
    FAIL("expected divergence");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kDiverged);
  }
  CHECK(ps.get("w")[0] == 0.5);
  CHECK(state.step == 0);
}

TEST_CASE("adam: deterministic and skips non-trainable tensors") {
  auto make = [] {
    ParameterSet<double> ps;
    Rng rng(4);
    ps.add("a", random_tensor({3, 2}, rng));
    ps.add("stats", TensorD({2}, 1.0), false);
    return ps;
  };
  auto run = [&] {
    auto ps = make();
    auto st = AdamState<double>::for_params(ps, 1e-2);
    Rng rng(5);
    for (int i = 0; i < 20; ++i) {
      ps.zero_grad();
      for (auto& g : ps.get("a").grad()) g = rng.uniform(-1, 1);
      adam_step(ps, st);
    }
    return ps;
  };
  const auto a = run();
  const auto b = run();
  CHECK(a == b);
  CHECK(a.get("stats").values() == std::vector<double>{1.0, 1.0});
  CHECK(AdamState<double>::for_params(a, 1e-3).matches(a));
}

TEST_CASE("ema: decay endpoints, closed form, schema check") {
  ParameterSet<double> student, teacher;
  Rng rng(6);
  student.add("w", random_tensor({4}, rng));
  student.add("running_mean", random_tensor({2}, rng), false);
  teacher = student.cast<double>();
  for (auto& p : teacher) p.tensor.fill(0.0);

  auto t0 = teacher.cast<double>();
  ema_update(t0, student, 0.0);
  CHECK(t0 == student);
  auto t1 = teacher.cast<double>();
  ema_update(t1, student, 1.0);
  CHECK(t1 == teacher);

  for (auto& p : student) p.tensor.fill(1.0);
  auto t = teacher.cast<double>();
  for (int k = 0; k < 100; ++k) ema_update(t, student, 0.999);
  for (const auto& p : t) {
    for (double v : p.tensor.values()) {
      CHECK(v == doctest::Approx(1.0 - std::pow(0.999, 100)).epsilon(1e-12));
      CHECK(v == doctest::Approx(0.09521).epsilon(1e-4));
    }
  }

  ParameterSet<double> other;
  other.add("w", TensorD({3}));
  CHECK_THROWS_AS(ema_update(other, student, 0.5), Error);
  CHECK_THROWS_AS(ema_update(t, student, 1.5), Error);
}
