#include <doctest.h>

#include <algorithm>
#include <set>

#include "kwsf/augment.hpp"
#include "kwsf/error.hpp"
#include "kwsf/features.hpp"
#include "kwsf/fft.hpp"
#include "unit/test_util.hpp"

using namespace kwsf;
using namespace kwsf::augment;

namespace {

// Peak frequency of a Hann-windowed n_fft-point slice from the middle of the clip.
double dominant_hz(const AudioClip& clip, std::size_t n_fft = 4096) {
  const auto window = dsp::hann_window(n_fft);
  const std::size_t start = (clip.size() - n_fft) / 2;
  std::vector<double> frame(n_fft);
  for (std::size_t i = 0; i < n_fft; ++i) frame[i] = clip.samples[start + i] * window[i];
  const auto spec = dsp::rfft(frame, n_fft);
  std::size_t best = 0;
  for (std::size_t k = 1; k < spec.size(); ++k) {
    if (std::norm(spec[k]) > std::norm(spec[best])) best = k;
  }
  return static_cast<double>(best) * kSampleRate / static_cast<double>(n_fft);
}

double rel_l2(const std::vector<double>& a, const std::vector<double>& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num / den);
}

std::size_t mel_argmax(const AudioClip& clip, std::size_t frame) {
  const auto m = dsp::log_mel(clip, dsp::FeatureConfig{});
  std::size_t best = 0;
  for (std::size_t r = 1; r < m.values.rows; ++r) {
    if (m.values(r, frame) > m.values(best, frame)) best = r;
  }
  return best;
}

constexpr double kBinHz = 16000.0 / 4096.0;

}  // namespace

TEST_CASE("add_noise: identity at level 0") {
  const auto clip = test::random_clip(16000, 1);
  CHECK(add_noise(clip, nullptr, 0.0, 3).samples == clip.samples);
  const auto bg = test::random_clip(32000, 2);
  CHECK(add_noise(clip, &bg, 0.0, 3).samples == clip.samples);
  CHECK_THROWS_AS(add_noise(clip, nullptr, -0.1, 3), Error);
}

TEST_CASE("add_noise: background peak equals level on a zero clip") {
  const AudioClip zero{std::vector<double>(16000, 0.0)};
  const auto bg = test::random_clip(40000, 4, 0.6);
  const auto out = add_noise(zero, &bg, 0.25, 9);
  CHECK(peak_abs(out.samples) == doctest::Approx(0.25).epsilon(1e-12));
  const AudioClip short_bg{std::vector<double>(100, 0.1)};
  CHECK_THROWS_AS(add_noise(zero, &short_bg, 0.25, 9), Error);
}

TEST_CASE("add_noise: gaussian matches a regenerated stream") {
  const auto clip = test::random_clip(16000, 5, 0.2);
  const auto out = add_noise(clip, nullptr, 0.25, 77);
  const auto g = gaussian_noise(16000, 77);
  const double peak = peak_abs(g);
  double sum = 0.0, sum2 = 0.0, max_err = 0.0;
  for (std::size_t i = 0; i < 16000; ++i) {
    const double d = out.samples[i] - clip.samples[i];
    sum += d;
    sum2 += d * d;
    max_err = std::max(max_err, std::abs(d - 0.25 * g[i] / peak));
  }
  CHECK(max_err < 1e-12);  // no clipping at these amplitudes
  const double mean = sum / 16000.0;
  const double sd = std::sqrt(sum2 / 16000.0 - mean * mean);
  CHECK(sd == doctest::Approx(0.25 / peak).epsilon(0.05));
  for (double s : add_noise(test::random_clip(16000, 6, 0.95), nullptr, 0.25, 1).samples) {
    CHECK(std::abs(s) <= 1.0);
  }
}

TEST_CASE("time_stretch: length, identity, pitch preservation") {
  const auto input = test::random_clip(16000, 7);
  CHECK(phase_vocoder(input.samples, 0.81).size() == 19753);
  CHECK(phase_vocoder(input.samples, 1.23).size() == static_cast<std::size_t>(std::llround(16000 / 1.23)));

  const auto tone = test::sine(440.0, 16000, 0.5);
  const auto same = time_stretch(tone, 1.0);
  REQUIRE(same.size() == 16000);
  CHECK(rel_l2(same.samples, tone.samples) <= 0.05);

  const auto fast = time_stretch(tone, 1.23);
  CHECK(fast.size() == 16000);
  CHECK(mel_argmax(fast, 49) == mel_argmax(tone, 49));
  CHECK(std::abs(dominant_hz(fast) - 440.0) <= kBinHz);

  const auto slow = time_stretch(tone, 0.81);
  CHECK(slow.size() == 16000);
  CHECK(std::abs(dominant_hz(slow) - 440.0) <= kBinHz);
  CHECK_THROWS_AS(time_stretch(tone, 0.0), Error);
}

TEST_CASE("pitch_shift: identity and equal-temperament targets") {
  const auto tone = test::sine(440.0, 16000, 0.5);
  const auto same = pitch_shift(tone, 0.0);
  CHECK(rel_l2(same.samples, tone.samples) <= 0.05);

  const auto up = pitch_shift(tone, 1.0);
  CHECK(up.size() == 16000);
  CHECK(std::abs(dominant_hz(up) - 466.16) <= kBinHz);

  const auto down = pitch_shift(test::sine(880.0, 16000, 0.5), -3.5);
  CHECK(down.size() == 16000);
  CHECK(std::abs(dominant_hz(down) - 880.0 * std::pow(2.0, -3.5 / 12.0)) <= kBinHz);
  CHECK(880.0 * std::pow(2.0, -3.5 / 12.0) == doctest::Approx(718.92).epsilon(1e-4));
}

TEST_CASE("sample_augmentation: grids and probabilities") {
  AugmentPolicy off;
  off.p_noise = off.p_stretch = off.p_pitch = 0.0;
  for (std::uint64_t s = 0; s < 200; ++s) CHECK(sample_augmentation(s, off).is_identity());

  AugmentPolicy noisy = off;
  noisy.p_noise = 1.0;
  const std::set<double> levels(kNoiseLevels.begin(), kNoiseLevels.end());
  const std::set<double> rates(kStretchRates.begin(), kStretchRates.end());
  const std::set<double> semis(kPitchSemitones.begin(), kPitchSemitones.end());
  for (std::uint64_t s = 0; s < 200; ++s) {
    const auto spec = sample_augmentation(s, noisy);
    CHECK(levels.count(spec.noise_level) == 1);
    CHECK(spec.has_noise());
  }

  AugmentPolicy all;
  all.p_noise = all.p_stretch = all.p_pitch = 1.0;
  std::set<double> seen_rates, seen_semis;
  for (std::uint64_t s = 0; s < 500; ++s) {
    const auto spec = sample_augmentation(s, all);
    CHECK(rates.count(spec.stretch_rate) == 1);
    CHECK(semis.count(spec.pitch_semitones) == 1);
    seen_rates.insert(spec.stretch_rate);
    seen_semis.insert(spec.pitch_semitones);
  }
  CHECK(seen_rates == rates);
  CHECK(seen_semis == semis);

  AugmentPolicy half;
  int hits = 0;
  for (std::uint64_t s = 0; s < 10000; ++s) {
    const auto spec = sample_augmentation(s, half);
    hits += spec.has_noise();
    CHECK(sample_augmentation(s, half) == spec);
    if (!spec.has_noise()) CHECK(spec.noise_level == 0.0);
    if (spec.stretch_rate != 1.0) CHECK(rates.count(spec.stretch_rate) == 1);
  }
  CHECK(std::abs(hits / 10000.0 - 0.5) <= 0.02);

  AugmentPolicy bad;
  bad.p_pitch = 1.5;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("spec json round trip") {
  AugmentSpec spec{0.15, NoiseKind::kBackground, 0.93, -2.5};
  CHECK(spec_from_json(spec_to_json(spec)) == spec);
  CHECK(spec_from_json(spec_to_json(AugmentSpec{})).is_identity());
}

TEST_CASE("apply: identity, determinism, seed dependence, bounds") {
  const auto clip = test::random_clip(16000, 8, 0.4);
  CHECK(apply(clip, AugmentSpec{}, 1).samples == clip.samples);

  const AugmentSpec spec{0.2, NoiseKind::kGaussian, 1.07, 2.0};
  const auto a = apply(clip, spec, 5);
  const auto b = apply(clip, spec, 5);
  CHECK(a.samples == b.samples);
  const auto c = apply(clip, spec, 6);
  CHECK(rel_l2(a.samples, c.samples) > 0.0);

  const std::vector<AudioClip> bank = {test::random_clip(20000, 9), test::random_clip(24000, 10)};
  Rng rng(11);
  AugmentPolicy all;
  all.p_noise = all.p_stretch = all.p_pitch = 1.0;
  for (int i = 0; i < 8; ++i) {
    const auto s = sample_augmentation(rng.next_u64(), all);
    const auto out = apply(test::random_clip(16000, 100 + i, 0.9), s, i, bank);
    CHECK(out.size() == 16000);
    CHECK(peak_abs(out.samples) <= 1.0);
  }
  CHECK_THROWS_AS(apply(clip, AugmentSpec{0.1, NoiseKind::kBackground, 1.0, 0.0}, 1), Error);
}
