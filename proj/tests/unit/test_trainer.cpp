#include <doctest.h>

#include <map>

#include "common/gradcheck.hpp"
#include "kwsf/error.hpp"
#include "kwsf/fixture.hpp"
#include "kwsf/trainer/trainer.hpp"

using namespace kwsf;
using namespace kwsf::trainer;
using kwsf::test::random_tensor;
using kwsf::test::TensorD;

namespace {

const std::vector<std::string> kWords = {"yes", "no", "up"};

TrainData tone_data(std::size_t n_labeled, std::size_t n_unlabeled, std::size_t n_val, std::uint64_t seed) {
  TrainData d;
  Rng rng(seed);
  auto sample = [&](std::size_t i, bool labeled) {
    const auto& w = kWords[i % kWords.size()];
    Sample s{synthesize_word(w, rng.next_u64()), std::nullopt};
    if (labeled) s.label = map_word_to_class(w);
    return s;
  };
  for (std::size_t i = 0; i < n_labeled; ++i) d.labeled.push_back(sample(i, true));
  for (std::size_t i = 0; i < n_unlabeled; ++i) d.unlabeled.push_back(sample(i, false));
  for (std::size_t i = 0; i < n_val; ++i) d.validation.push_back(sample(i, true));
  for (std::size_t i = 0; i < n_val; ++i) d.holdout.push_back(sample(i + 1, true));
  return d;
}

PipelineConfig small_pipeline(bool augment) {
  PipelineConfig p;
  p.features.n_mels = 16;
  if (!augment) p.augment.p_noise = p.augment.p_stretch = p.augment.p_pitch = 0.0;
  return p;
}

model::NetworkConfig small_net() {
  model::NetworkConfig c;
  c.n_blocks = 2;
  c.channels = {4, 4};
  c.fc_hidden = 16;
  c.input_height = 16;
  c.input_width = 98;
  return c;
}

// --- straight-line reference for a one-block network (double precision) ---

using Vol = std::vector<std::vector<std::vector<std::vector<double>>>>;  // [n][c][h][w]

Vol to_vol(const TensorD& t) {
  Vol v(t.dim(0), std::vector(t.dim(1), std::vector(t.dim(2), std::vector<double>(t.dim(3)))));
  for (std::size_t n = 0; n < t.dim(0); ++n)
    for (std::size_t c = 0; c < t.dim(1); ++c)
      for (std::size_t y = 0; y < t.dim(2); ++y)
        for (std::size_t x = 0; x < t.dim(3); ++x) v[n][c][y][x] = t.at(n, c, y, x);
  return v;
}

Vol ref_conv(const Vol& in, const TensorD& k, const TensorD& b) {
  const std::size_t N = in.size(), C = in[0].size(), H = in[0][0].size(), W = in[0][0][0].size(), O = k.dim(0);
  Vol out(N, std::vector(O, std::vector(H, std::vector<double>(W))));
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
          double s = b[o];
          for (std::size_t c = 0; c < C; ++c)
            for (int dy = -1; dy <= 1; ++dy)
              for (int dx = -1; dx <= 1; ++dx) {
                const long yy = static_cast<long>(y) + dy, xx = static_cast<long>(x) + dx;
                if (yy < 0 || xx < 0 || yy >= static_cast<long>(H) || xx >= static_cast<long>(W)) continue;
                s += in[n][c][yy][xx] * k.at(o, c, dy + 1, dx + 1);
              }
          out[n][o][y][x] = s;
        }
  return out;
}

Vol ref_subblock(const Vol& in, const nn::ParameterSet<double>& p, const std::string& pre, bool residual) {
  const Vol f = ref_conv(in, p.get(pre + ".filter.weight"), p.get(pre + ".filter.bias"));
  const Vol g = ref_conv(in, p.get(pre + ".gate.weight"), p.get(pre + ".gate.bias"));
  Vol out = f;
  const std::size_t N = f.size(), C = f[0].size(), H = f[0][0].size(), W = f[0][0][0].size();
  for (std::size_t c = 0; c < C; ++c) {
    double mean = 0.0, var = 0.0;
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
          out[n][c][y][x] = std::max(0.0, f[n][c][y][x]) / (1.0 + std::exp(-g[n][c][y][x]));
          mean += out[n][c][y][x];
        }
    mean /= static_cast<double>(N * H * W);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) var += (out[n][c][y][x] - mean) * (out[n][c][y][x] - mean);
    var /= static_cast<double>(N * H * W);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
          double v = (out[n][c][y][x] - mean) / std::sqrt(var + 1e-5) * p.get(pre + ".bn.scale")[c] +
                     p.get(pre + ".bn.offset")[c];
          if (residual) v += in[n][c][y][x];
          out[n][c][y][x] = v;
        }
  }
  return out;
}

std::vector<std::vector<double>> ref_logits(const nn::ParameterSet<double>& p, const TensorD& batch) {
  Vol v = to_vol(batch);
  v = ref_subblock(v, p, "block0.sub0", false);
  v = ref_subblock(v, p, "block0.sub1", true);
  const std::size_t N = v.size(), C = v[0].size(), H = v[0][0].size() / 2, W = v[0][0][0].size() / 2;
  std::vector<std::vector<double>> logits;
  const auto& w1 = p.get("fc1.weight");
  const auto& b1 = p.get("fc1.bias");
  const auto& w2 = p.get("fc2.weight");
  const auto& b2 = p.get("fc2.bias");
  for (std::size_t n = 0; n < N; ++n) {
    std::vector<double> flat;
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
          flat.push_back(std::max({v[n][c][2 * y][2 * x], v[n][c][2 * y][2 * x + 1], v[n][c][2 * y + 1][2 * x],
                                   v[n][c][2 * y + 1][2 * x + 1]}));
        }
    const std::size_t D = flat.size(), K1 = b1.size(), K2 = b2.size();
    std::vector<double> hidden(K1), out(K2);
    for (std::size_t k = 0; k < K1; ++k) {
      double s = b1[k];
      for (std::size_t d = 0; d < D; ++d) s += flat[d] * w1[d * K1 + k];
      hidden[k] = std::max(0.0, s);
    }
    for (std::size_t k = 0; k < K2; ++k) {
      double s = b2[k];
      for (std::size_t d = 0; d < K1; ++d) s += hidden[d] * w2[d * K2 + k];
      out[k] = s;
    }
    logits.push_back(out);
  }
  return logits;
}

std::vector<double> ref_softmax(const std::vector<double>& z) {
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp(v - m);
  std::vector<double> p;
  for (double v : z) p.push_back(std::exp(v - m) / s);
  return p;
}

}  // namespace

TEST_CASE("train step: total loss matches a straight-line recomputation") {
  model::NetworkConfig cfg;
  cfg.n_blocks = 1;
  cfg.channels = {2};
  cfg.fc_hidden = 3;
  cfg.input_height = 4;
  cfg.input_width = 6;
  cfg.dropout_rate = 0.0;
  auto student = model::build_network<double>(cfg, 1);
  auto teacher = model::build_network<double>(cfg, 2);
  Rng rng(3);
  for (auto& p : student) {
    if (p.name.find("bias") != std::string::npos || p.name.find("offset") != std::string::npos) {
      for (double& v : p.tensor.values()) v = rng.uniform(-0.3, 0.3);
    }
  }
  Minibatch<double> batch;
  batch.student_view = random_tensor({2, 1, 4, 6}, rng);
  batch.teacher_view = random_tensor({2, 1, 4, 6}, rng);
  batch.labels = {4};  // first row labeled, second unlabeled
  const double lambda = 0.7;

  const auto zs = ref_logits(student, batch.student_view);
  const auto zt = ref_logits(teacher, batch.teacher_view);
  const double ce = -std::log(ref_softmax(zs[0])[4]);
  double kl = 0.0;
  for (std::size_t n = 0; n < 2; ++n) {
    const auto ps = ref_softmax(zs[n]), pt = ref_softmax(zt[n]);
    for (std::size_t k = 0; k < 12; ++k) kl += pt[k] * (std::log(pt[k]) - std::log(ps[k]));
  }
  kl /= 2.0;

  auto opt = nn::AdamState<double>::for_params(student, 1e-3);
  const auto r = train_step(student, teacher, cfg, batch, {TrainMode::kMeanTeacher, lambda, 0.99}, opt);
  CHECK(std::abs(r.class_loss - ce) < 1e-10);
  CHECK(std::abs(r.consistency_loss - kl) < 1e-10);
  CHECK(std::abs(r.total_loss - (ce + lambda * kl)) < 1e-10);
}

TEST_CASE("train step: lambda 0 equals supervised bitwise") {
  const auto cfg = small_net();
  Rng rng(4);
  auto base = model::build_network<float>(cfg, 8);
  auto s1 = base, t1 = base, s2 = base, t2 = base;
  auto o1 = nn::AdamState<float>::for_params(base, 1e-3), o2 = o1;
  for (int step = 0; step < 3; ++step) {
    Minibatch<float> batch;
    batch.student_view = random_tensor({4, 1, 16, 98}, rng).cast<float>();
    batch.teacher_view = random_tensor({4, 1, 16, 98}, rng).cast<float>();
    batch.labels = {0, 1, 2, 11};
    const auto a = train_step(s1, t1, cfg, batch, {TrainMode::kSupervised, 0.0, 0.9, {}, 77u + step}, o1);
    const auto b = train_step(s2, t2, cfg, batch, {TrainMode::kMeanTeacher, 0.0, 0.9, {}, 77u + step}, o2);
    CHECK(a.class_loss == b.class_loss);
    CHECK(a.total_loss == b.total_loss);
  }
  CHECK(s1 == s2);
  CHECK(t1 == t2);
}

TEST_CASE("trainer: lambda 0 mean teacher equals supervised over an epoch") {
  const auto data = tone_data(8, 0, 0, 5);
  TrainConfig sup;
  sup.mode = TrainMode::kSupervised;
  sup.batch_size = 4;
  sup.epochs = 1;
  sup.steps_per_epoch = 3;
  sup.seed = 21;
  TrainConfig mt = sup;
  mt.mode = TrainMode::kMeanTeacher;
  mt.labeled_per_batch = 4;
  mt.consistency_weight = 0.0;
  Trainer a(small_net(), sup, data, small_pipeline(true));
  Trainer b(small_net(), mt, data, small_pipeline(true));
  a.run_epoch();
  b.run_epoch();
  CHECK(a.student() == b.student());
}

TEST_CASE("train step: identical teacher and views give zero consistency, teacher has no gradient") {
  auto cfg = small_net();
  cfg.dropout_rate = 0.0;
  auto student = model::build_network<float>(cfg, 3);
  auto teacher = student;
  Rng rng(5);
  Minibatch<float> batch;
  batch.student_view = random_tensor({4, 1, 16, 98}, rng).cast<float>();
  batch.teacher_view = batch.student_view;
  batch.labels = {0, 1};
  auto opt = nn::AdamState<float>::for_params(student, 1e-3);
  const auto before = teacher;
  const auto r = train_step(student, teacher, cfg, batch, {TrainMode::kMeanTeacher, 1.0, 1.0}, opt);
  CHECK(r.consistency_loss == 0.0);
  CHECK(teacher == before);  // decay 1: only backprop could have moved it
  for (const auto& p : teacher) CHECK_FALSE(p.tensor.has_grad());
  CHECK_FALSE(student == before);
}

TEST_CASE("train step: divergence is reported") {
  const auto cfg = small_net();
  auto student = model::build_network<float>(cfg, 3);
  auto teacher = student;
  student.get("fc2.bias")[0] = std::numeric_limits<float>::infinity();
  Minibatch<float> batch;
  Rng rng(6);
  batch.student_view = random_tensor({2, 1, 16, 98}, rng).cast<float>();
  batch.teacher_view = batch.student_view;
  batch.labels = {0, 1};
  auto opt = nn::AdamState<float>::for_params(student, 1e-3);
  try {
    train_step(student, teacher, cfg, batch, {TrainMode::kMeanTeacher, 1.0, 0.99}, opt);
    FAIL("expected divergence");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kDiverged);
  }
}

TEST_CASE("minibatch: composition and independent views") {
  const auto data = tone_data(10, 12, 0, 7);
  PipelineConfig p;
  p.augment.p_noise = 1.0;
  const FeaturePipeline pipe(p.features, p.augment, data.noise_bank);
  const auto b = make_minibatch(data, pipe, {32, 16, true}, 3);
  CHECK(b.size() == 32);
  CHECK(b.n_labeled() == 16);
  CHECK(b.student_view.shape() == nn::Shape{32, 1, 40, 98});
  CHECK(b.teacher_view.shape() == b.student_view.shape());
  for (std::size_t i = 0; i < 32; ++i) {
    double d = 0.0;
    for (std::size_t j = 0; j < pipe.frame_size(); ++j) {
      const double diff = b.student_view[i * pipe.frame_size() + j] - b.teacher_view[i * pipe.frame_size() + j];
      d += diff * diff;
    }
    CHECK(d > 0.0);
  }
  // Labeled rows come from the labeled pool, in label order of their words.
  for (int y : b.labels) CHECK((y == 0 || y == 1 || y == 2));
  const auto again = make_minibatch(data, pipe, {32, 16, true}, 3);
  CHECK(again.student_view == b.student_view);
  CHECK_FALSE(make_minibatch(data, pipe, {32, 16, true}, 3, 1).student_view == b.student_view);

  const auto no_teacher = make_minibatch(data, pipe, {8, 8, false}, 3);
  CHECK(no_teacher.teacher_view.empty());
  CHECK(no_teacher.n_labeled() == 8);

  TrainData empty;
  CHECK_THROWS_AS(make_minibatch(empty, pipe, {4, 2, true}, 1), Error);
}

TEST_CASE("train config: supervised uses the whole batch, validation") {
  TrainConfig c;
  c.batch_size = 32;
  CHECK(c.effective_labeled_per_batch() == 16);
  c.mode = TrainMode::kSupervised;
  c.labeled_per_batch = 5;
  CHECK(c.effective_labeled_per_batch() == 32);
  c.mode = TrainMode::kMeanTeacher;
  c.labeled_per_batch = 40;
  CHECK_THROWS_AS(c.validate(), Error);
  c = {};
  c.consistency_weight = -1.0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = {};
  c.ema_decay = 1.1;
  CHECK_THROWS_AS(c.validate(), Error);
  c = {};
  c.mode = TrainMode::kSupervised;
  c.seed = 99;
  CHECK(train_config_to_json(train_config_from_json(train_config_to_json(c))) == train_config_to_json(c));
}

TEST_CASE("cyclic sampler: permutations, purity") {
  CyclicSampler s(7, 3);
  std::vector<int> seen(7, 0);
  for (std::uint64_t p = 0; p < 7; ++p) ++seen[s.at(p)];
  for (int c : seen) CHECK(c == 1);
  std::vector<std::size_t> second;
  for (std::uint64_t p = 7; p < 14; ++p) second.push_back(s.at(p));
  CyclicSampler fresh(7, 3);
  CHECK(fresh.at(9) == second[2]);
  CHECK(fresh.at(2) == s.at(2));
}

TEST_CASE("confusion and evaluation examples") {
  std::vector<int> truth, perfect;
  for (int i = 0; i < 24; ++i) {
    truth.push_back(i % 12);
    perfect.push_back(i % 12);
  }
  const auto diag = confusion_from_predictions(truth, perfect);
  CHECK(diag.accuracy() == 1.0);
  CHECK(diag.total() == 24);
  for (std::size_t i = 0; i < 12; ++i)
    for (std::size_t j = 0; j < 12; ++j) CHECK(diag.counts[i][j] == (i == j ? 2u : 0u));

  const std::vector<int> constant(24, 3);
  const auto col = confusion_from_predictions(truth, constant);
  for (std::size_t i = 0; i < 12; ++i)
    for (std::size_t j = 0; j < 12; ++j) CHECK((col.counts[i][j] != 0) == (j == 3));
  CHECK(col.accuracy() == doctest::Approx(2.0 / 24.0));

  std::vector<int> crafted(10, 0);
  crafted.push_back(1);
  crafted.push_back(2);
  const auto majority = confusion_from_predictions(crafted, std::vector<int>(12, 0));
  CHECK(majority.accuracy() == doctest::Approx(10.0 / 12.0));
  CHECK(majority.accuracy() == doctest::Approx(0.8333).epsilon(1e-4));

  const auto csv = confusion_csv(diag);
  CHECK(csv.rfind("true\\pred,yes,no,up,down,left,right,stop,go,on,off,unknown,silence\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 13);

  ConfusionMatrix m;
  m.add(10, 11);
  m.add(11, 0);
  m.add(0, 1);
  m.add(10, 10);
  CHECK(m.errors_involving(ClassLabel::kUnknown) == 1);
  CHECK(m.errors_involving(ClassLabel::kSilence) == 2);
  CHECK_THROWS_AS(m.add(12, 0), Error);
  CHECK_THROWS_AS(ConfusionMatrix{}.accuracy(), Error);

  const auto cfg = small_net();
  const auto params = model::build_network<float>(cfg, 1);
  const std::vector<int> none;
  CHECK_THROWS_AS(evaluate(params, cfg, nn::Tensor<float>({0, 1, 16, 98}), none), Error);
}

TEST_CASE("evaluate agrees with predict") {
  const auto cfg = small_net();
  const auto params = model::build_network<float>(cfg, 2);
  Rng rng(9);
  const auto x = random_tensor({70, 1, 16, 98}, rng).cast<float>();
  const auto pred = predict(params, cfg, x);
  REQUIRE(pred.size() == 70);
  CHECK(predict(params, cfg, x, 7) == pred);
  std::vector<int> labels(70, 5);
  const auto r = evaluate(params, cfg, x, labels);
  CHECK(r.confusion.total() == 70);
  CHECK(r.accuracy == doctest::Approx(std::count(pred.begin(), pred.end(), 5) / 70.0));
}

TEST_CASE("train loop: zero epochs, determinism, control channel") {
  const auto data = tone_data(6, 6, 3, 11);
  TrainConfig c;
  c.batch_size = 4;
  c.epochs = 0;
  c.steps_per_epoch = 2;
  c.seed = 5;
  const auto zero = train_loop(small_net(), c, data, small_pipeline(true));
  CHECK(zero.metrics.empty());
  CHECK(zero.checkpoint.epoch == 0);
  Trainer fresh(small_net(), c, data, small_pipeline(true));
  CHECK(zero.checkpoint.student == fresh.student());

  c.epochs = 2;
  c.record_student = true;
  const auto a = train_loop(small_net(), c, data, small_pipeline(true));
  const auto b = train_loop(small_net(), c, data, small_pipeline(true));
  CHECK(metrics_csv(a.metrics, true) == metrics_csv(b.metrics, true));
  CHECK(a.checkpoint == b.checkpoint);
  CHECK(a.metrics.size() == 2);
  CHECK(a.metrics[1].epoch == 2);
  CHECK(a.metrics[0].validation_accuracy.has_value());
  CHECK(a.metrics[0].student_validation_accuracy.has_value());
  CHECK(a.checkpoint.teacher_is_model);
  CHECK(a.checkpoint.global_step == 4);
  const auto csv = metrics_csv(a.metrics);
  CHECK(csv.rfind("epoch,class_loss,cons_loss,holdout_acc,val_acc,seconds\n", 0) == 0);

  // Resuming from the epoch-1 checkpoint reproduces epoch 2.
  TrainConfig one = c;
  one.epochs = 1;
  const auto first = train_loop(small_net(), one, data, small_pipeline(true));
  Trainer resumed(first.checkpoint, c, data, small_pipeline(true));
  resumed.run_epoch();
  CHECK(resumed.checkpoint() == a.checkpoint);

  ControlChannel channel;
  channel.post({0.5, std::nullopt, std::nullopt});
  channel.post({std::nullopt, 3.0, 0.2});
  Trainer t(small_net(), c, data, small_pipeline(true));
  t.run_epoch(&channel);
  CHECK(t.config().learning_rate == 0.5);
  CHECK(t.config().consistency_weight == 3.0);
  CHECK(t.network().dropout_rate == 0.2);
  CHECK_FALSE(channel.take());

  channel.request_stop();
  const auto before = t.global_step();
  t.run_epoch(&channel);
  CHECK(t.global_step() == before);
}

TEST_CASE("supervised training drives the classification loss down") {
  const auto data = tone_data(12, 0, 6, 13);
  TrainConfig c;
  c.mode = TrainMode::kSupervised;
  c.batch_size = 6;
  c.epochs = 15;
  c.learning_rate = 3e-3;
  c.seed = 2;
  const auto r = train_loop(small_net(), c, data, small_pipeline(false));
  REQUIRE(r.metrics.size() == 15);
  INFO("initial ", r.metrics.front().class_loss, " final ", r.metrics.back().class_loss);
  CHECK(r.metrics.back().class_loss < 0.2 * r.metrics.front().class_loss);
  // Twelve clips only; ask for better than chance on three words, not a fit.
  CHECK(r.metrics.back().validation_accuracy.value() > 1.0 / 3.0);
}
