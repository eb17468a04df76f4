#include "kwsf/augment.hpp"

#include <algorithm>
#include <cmath>
#include <complex>

#include <json.hpp>

#include "kwsf/error.hpp"
#include "kwsf/fft.hpp"
#include "kwsf/random.hpp"

namespace kwsf::augment {
namespace {

using dsp::Complex;

const char* kind_name(NoiseKind k) {
  switch (k) {
    case NoiseKind::kNone: return "none";
    case NoiseKind::kBackground: return "background";
    case NoiseKind::kGaussian: return "gaussian";
  }
  return "none";
}

NoiseKind kind_from_name(const std::string& s) {
  if (s == "none") return NoiseKind::kNone;
  if (s == "background") return NoiseKind::kBackground;
  if (s == "gaussian") return NoiseKind::kGaussian;
  fail(ErrorCode::kFormat, "unknown noise kind '" + s + "'");
}

double wrap_phase(double x) { return x - 2.0 * M_PI * std::round(x / (2.0 * M_PI)); }

void clamp_unit(std::vector<double>& v) {
  for (double& s : v) s = std::clamp(s, -1.0, 1.0);
}

double pick(Rng& rng, const std::vector<double>& grid) { return grid[rng.index(grid.size())]; }

}  // namespace

std::string spec_to_json(const AugmentSpec& spec) {
  nlohmann::ordered_json j;
  j["noise_level"] = spec.noise_level;
  j["noise_kind"] = kind_name(spec.noise_kind);
  j["stretch_rate"] = spec.stretch_rate;
  j["pitch_semitones"] = spec.pitch_semitones;
  return j.dump();
}

AugmentSpec spec_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    AugmentSpec s;
    s.noise_level = j.at("noise_level").get<double>();
    s.noise_kind = kind_from_name(j.at("noise_kind").get<std::string>());
    s.stretch_rate = j.at("stretch_rate").get<double>();
    s.pitch_semitones = j.at("pitch_semitones").get<double>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormat, std::string("augment spec: ") + e.what());
  }
}

void AugmentPolicy::validate() const {
  for (double p : {p_noise, p_stretch, p_pitch, p_background}) {
    require(p >= 0.0 && p <= 1.0, ErrorCode::kConfig, "augment probabilities must lie in [0, 1]");
  }
  require(!noise_levels.empty() && !stretch_rates.empty() && !pitch_semitones.empty(), ErrorCode::kConfig,
          "augment grids must be non-empty");
}

AugmentSpec sample_augmentation(std::uint64_t seed, const AugmentPolicy& policy) {
  policy.validate();
  Rng rng(seed);
  AugmentSpec spec;
  if (rng.bernoulli(policy.p_noise)) {
    spec.noise_level = pick(rng, policy.noise_levels);
    spec.noise_kind = rng.bernoulli(policy.p_background) ? NoiseKind::kBackground : NoiseKind::kGaussian;
  }
  if (rng.bernoulli(policy.p_stretch)) spec.stretch_rate = pick(rng, policy.stretch_rates);
  if (rng.bernoulli(policy.p_pitch)) spec.pitch_semitones = pick(rng, policy.pitch_semitones);
  return spec;
}

std::vector<double> gaussian_noise(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> out(n);
  for (double& v : out) v = rng.normal();
  return out;
}

AudioClip add_noise(const AudioClip& clip, const AudioClip* background, double level, std::uint64_t seed) {
  require(level >= 0.0, ErrorCode::kInvalidArgument, "noise level must be >= 0");
  if (level == 0.0) return clip;
  const std::size_t n = clip.size();
  std::vector<double> noise;
  if (background != nullptr) {
    require(background->size() >= n, ErrorCode::kInsufficientNoise, "background noise shorter than clip");
    Rng rng(seed);
    const std::size_t offset = rng.index(background->size() - n + 1);
    noise.assign(background->samples.begin() + static_cast<std::ptrdiff_t>(offset),
                 background->samples.begin() + static_cast<std::ptrdiff_t>(offset + n));
  } else {
    noise = gaussian_noise(n, seed);
  }
  const double peak = peak_abs(noise);
  AudioClip out = clip;
  if (peak > 0.0) {
    for (std::size_t i = 0; i < n; ++i) out.samples[i] += level * (noise[i] / peak);
  }
  clamp_unit(out.samples);
  return out;
}

std::vector<double> phase_vocoder(std::span<const double> samples, double rate, const VocoderConfig& config) {
  require(rate > 0.0, ErrorCode::kInvalidArgument, "stretch rate must be positive");
  require(dsp::is_power_of_two(config.n_fft) && config.hop > 0 && config.hop <= config.n_fft,
          ErrorCode::kConfig, "vocoder needs power-of-two n_fft and 0 < hop <= n_fft");
  const std::size_t n_fft = config.n_fft, hop = config.hop, bins = n_fft / 2 + 1;
  const std::size_t pad = n_fft / 2;
  const std::size_t len = samples.size();
  const auto out_len = static_cast<std::size_t>(std::llround(static_cast<double>(len) / rate));
  if (len == 0) return std::vector<double>(out_len, 0.0);

  // Centered STFT over a zero-padded copy.
  std::vector<double> padded(len + 2 * pad, 0.0);
  std::copy(samples.begin(), samples.end(), padded.begin() + static_cast<std::ptrdiff_t>(pad));
  const std::size_t n_frames = (padded.size() - n_fft) / hop + 1;
  const auto window = dsp::hann_window(n_fft);
  std::vector<std::vector<Complex>> stft(n_frames + 1, std::vector<Complex>(bins));
  std::vector<double> frame(n_fft);
  for (std::size_t t = 0; t < n_frames; ++t) {
    for (std::size_t i = 0; i < n_fft; ++i) frame[i] = padded[t * hop + i] * window[i];
    stft[t] = dsp::rfft(frame, n_fft);
  }
  // stft[n_frames] stays zero so interpolation at the last step is defined.
  std::vector<std::vector<double>> mags(n_frames + 1, std::vector<double>(bins));
  std::vector<std::vector<double>> args(n_frames + 1, std::vector<double>(bins));
  for (std::size_t t = 0; t <= n_frames; ++t) {
    for (std::size_t k = 0; k < bins; ++k) {
      mags[t][k] = std::abs(stft[t][k]);
      args[t][k] = std::arg(stft[t][k]);
    }
  }

  std::vector<double> advance(bins);
  for (std::size_t k = 0; k < bins; ++k) advance[k] = 2.0 * M_PI * static_cast<double>(hop * k) / static_cast<double>(n_fft);
  std::vector<double> phase(bins);
  for (std::size_t k = 0; k < bins; ++k) phase[k] = args[0][k];

  // Overlap-add resynthesis, normalized by the summed squared window.
  const std::size_t n_out_frames = static_cast<std::size_t>(std::ceil(static_cast<double>(n_frames) / rate));
  std::vector<double> out(n_fft + hop * (n_out_frames + 1), 0.0);
  std::vector<double> norm(out.size(), 0.0);
  std::vector<Complex> column(bins);
  std::size_t produced = 0;
  for (double step = 0.0; step < static_cast<double>(n_frames); step = static_cast<double>(produced) * rate) {
    const auto i = static_cast<std::size_t>(step);
    const double alpha = step - static_cast<double>(i);
    for (std::size_t k = 0; k < bins; ++k) {
      const double mag = (1.0 - alpha) * mags[i][k] + alpha * mags[i + 1][k];
      column[k] = std::polar(mag, phase[k]);
      const double dphase = wrap_phase(args[i + 1][k] - args[i][k] - advance[k]);
      phase[k] += advance[k] + dphase;
    }
    const auto time = dsp::irfft(column, n_fft);
    const std::size_t base = produced * hop;
    for (std::size_t s = 0; s < n_fft; ++s) {
      out[base + s] += time[s] * window[s];
      norm[base + s] += window[s] * window[s];
    }
    ++produced;
  }
  for (std::size_t s = 0; s < out.size(); ++s) {
    if (norm[s] > 1e-8) out[s] /= norm[s];
  }

  std::vector<double> result(out_len, 0.0);
  for (std::size_t s = 0; s < out_len && s + pad < out.size(); ++s) result[s] = out[s + pad];
  return result;
}

AudioClip time_stretch(const AudioClip& clip, double rate) {
  AudioClip out;
  out.sample_rate = clip.sample_rate;
  out.source_path = clip.source_path;
  out.samples = phase_vocoder(clip.samples, rate);
  clamp_unit(out.samples);
  return standardize_clip(out, clip.sample_rate);
}

AudioClip pitch_shift(const AudioClip& clip, double semitones) {
  require(std::abs(semitones) <= 12.0, ErrorCode::kInvalidArgument, "pitch shift limited to +/-12 semitones");
  const double rate = std::pow(2.0, -semitones / 12.0);
  AudioClip out;
  out.sample_rate = clip.sample_rate;
  out.source_path = clip.source_path;
  out.samples = resize_linear(phase_vocoder(clip.samples, rate), clip.size());
  clamp_unit(out.samples);
  return out;
}

AudioClip apply(const AudioClip& clip, const AugmentSpec& spec, std::uint64_t seed,
                std::span<const AudioClip> noise_bank) {
  AudioClip out = clip;
  if (spec.stretch_rate != 1.0) out = time_stretch(out, spec.stretch_rate);
  if (spec.pitch_semitones != 0.0) out = pitch_shift(out, spec.pitch_semitones);
  if (spec.has_noise()) {
    const AudioClip* background = nullptr;
    if (spec.noise_kind == NoiseKind::kBackground) {
      require(!noise_bank.empty(), ErrorCode::kConfig, "background noise requested but the noise bank is empty");
      Rng pick_rng(derive_seed(seed, {0xba4cULL}));
      background = &noise_bank[pick_rng.index(noise_bank.size())];
    }
    out = add_noise(standardize_clip(out, out.sample_rate), background, spec.noise_level,
                    derive_seed(seed, {0x4015eULL}));
  }
  if (out.size() != static_cast<std::size_t>(out.sample_rate)) out = standardize_clip(out, out.sample_rate);
  return out;
}

}  // namespace kwsf::augment
