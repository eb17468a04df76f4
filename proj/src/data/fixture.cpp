#include "kwsf/fixture.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

#include "kwsf/error.hpp"
#include "kwsf/random.hpp"
#include "kwsf/wav.hpp"

namespace fs = std::filesystem;

namespace kwsf {
namespace {

struct Pattern {
  double f_start, f_end;  // Hz, linear sweep
  int bursts;             // 1 = continuous
  double am_rate;         // Hz, 0 = none
};

// Patterns are chosen so the dominant mel band differs between target words.
Pattern pattern_for(const std::string& word) {
  static const std::map<std::string, Pattern> kPatterns = {
      {"yes", {350.0, 900.0, 1, 0.0}},      {"no", {2000.0, 1150.0, 1, 0.0}},
      {"up", {3000.0, 3000.0, 2, 0.0}},     {"down", {4200.0, 2600.0, 1, 0.0}},
      {"left", {500.0, 500.0, 3, 0.0}},     {"right", {1500.0, 2500.0, 1, 0.0}},
      {"stop", {5000.0, 5000.0, 2, 0.0}},   {"go", {250.0, 250.0, 1, 6.0}},
      {"on", {3800.0, 3800.0, 1, 9.0}},     {"off", {6000.0, 4500.0, 1, 0.0}},
      {"bed", {1400.0, 1400.0, 1, 7.0}},    {"cat", {650.0, 650.0, 2, 0.0}},
      {"house", {2600.0, 1800.0, 2, 0.0}},
  };
  if (auto it = kPatterns.find(word); it != kPatterns.end()) return it->second;
  // Unlisted words get a pattern derived from their name.
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : word) h = (h ^ c) * 1099511628211ULL;
  Rng rng(h);
  const double f0 = rng.uniform(300.0, 5000.0);
  return {f0, f0 * rng.uniform(0.6, 1.6), 1 + static_cast<int>(rng.index(3)), 0.0};
}

}  // namespace

AudioClip synthesize_word(const std::string& word, std::uint64_t seed) {
  const Pattern p = pattern_for(word);
  Rng rng(seed);
  const double pitch = rng.uniform(0.88, 1.12);
  const double duration = rng.uniform(0.35, 0.7);
  const double onset = rng.uniform(0.05, 0.95 - duration);
  const double amplitude = rng.uniform(0.3, 0.8);
  const double harmonic = rng.uniform(0.1, 0.4);
  const double noise_amp = rng.uniform(0.003, 0.03);
  const double phase0 = rng.uniform(0.0, 2.0 * M_PI);

  AudioClip clip;
  clip.samples.assign(kSampleRate, 0.0);
  const double sr = kSampleRate;
  double phase = phase0;
  for (int i = 0; i < kSampleRate; ++i) {
    const double t = i / sr;
    const double local = (t - onset) / duration;  // 0..1 inside the utterance
    double v = 0.0;
    if (local >= 0.0 && local < 1.0) {
      const double f = pitch * (p.f_start + (p.f_end - p.f_start) * local);
      phase += 2.0 * M_PI * f / sr;
      double env = std::sin(M_PI * local);
      if (p.bursts > 1) {
        const double seg = local * p.bursts;
        const double within = seg - std::floor(seg);
        env = within < 0.7 ? std::sin(M_PI * within / 0.7) : 0.0;
      }
      if (p.am_rate > 0.0) env *= 0.6 + 0.4 * std::sin(2.0 * M_PI * p.am_rate * t);
      v = amplitude * env * (std::sin(phase) + harmonic * std::sin(2.0 * phase)) / (1.0 + harmonic);
    }
    clip.samples[static_cast<std::size_t>(i)] = std::clamp(v + noise_amp * rng.normal(), -1.0, 1.0);
  }
  return clip;
}

std::size_t write_fixture(const fs::path& out, const FixtureConfig& config) {
  std::error_code ec;
  fs::create_directories(out, ec);
  require(!ec, ErrorCode::kIo, "cannot create " + out.string());
  require(config.n_speakers > 0, ErrorCode::kInvalidArgument, "fixture needs at least one speaker");

  std::vector<std::string> speakers;
  {
    Rng rng(derive_seed(config.seed, {0x5bea4e5ULL}));
    for (std::size_t s = 0; s < config.n_speakers; ++s) {
      char buf[16];
      std::snprintf(buf, sizeof buf, "%08x", static_cast<unsigned>(rng.next_u64() & 0xffffffffU));
      speakers.emplace_back(buf);
    }
  }

  std::size_t written = 0;
  auto emit_word = [&](const std::string& word, std::size_t count, std::uint64_t word_tag) {
    const fs::path dir = out / word;
    fs::create_directories(dir);
    std::map<std::string, int> next_index;
    Rng assign(derive_seed(config.seed, {word_tag, 0xa55e9ULL}));
    for (std::size_t k = 0; k < count; ++k) {
      const std::string& spk = speakers[assign.index(speakers.size())];
      const int idx = next_index[spk]++;
      const auto clip = synthesize_word(word, derive_seed(config.seed, {word_tag, k}));
      save_wav(dir / (spk + "_nohash_" + std::to_string(idx) + ".wav"), clip);
      ++written;
    }
  };

  std::uint64_t tag = 1;
  for (const auto& w : config.words) emit_word(w, config.n_per_class, tag++);
  tag = 1000;
  for (const auto& w : config.oov_words) emit_word(w, config.n_oov_per_word, tag++);

  const fs::path noise_dir = out / "_background_noise_";
  fs::create_directories(noise_dir);
  const auto noise_len = static_cast<std::size_t>(config.noise_seconds * kSampleRate);
  for (std::size_t k = 0; k < config.n_noise_files; ++k) {
    Rng rng(derive_seed(config.seed, {0x401ce0ULL, k}));
    AudioClip noise;
    noise.samples.resize(noise_len);
    // Alternate white and low-passed ("brown-ish") noise.
    double state = 0.0;
    for (auto& s : noise.samples) {
      const double w = rng.normal();
      if (k % 2 == 0) {
        s = 0.25 * w;
      } else {
        state = 0.97 * state + 0.2 * w;
        s = 0.5 * state;
      }
      s = std::clamp(s, -1.0, 1.0);
    }
    save_wav(noise_dir / ((k % 2 == 0 ? "white_noise_" : "brown_noise_") + std::to_string(k) + ".wav"), noise);
  }
  return written;
}

}  // namespace kwsf
