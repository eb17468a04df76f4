#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "kwsf/audio.hpp"

namespace kwsf::augment {

inline constexpr std::array<double, 4> kNoiseLevels = {0.1, 0.15, 0.20, 0.25};
inline constexpr std::array<double, 4> kStretchRates = {0.81, 0.93, 1.07, 1.23};
inline constexpr std::array<double, 8> kPitchSemitones = {-3.5, -2.5, -2.0, -1.0, 1.0, 2.0, 2.5, 3.5};

enum class NoiseKind { kNone, kBackground, kGaussian };

// Identity elements: level 0 / kind none, rate 1, zero semitones.
struct AugmentSpec {
  double noise_level = 0.0;
  NoiseKind noise_kind = NoiseKind::kNone;
  double stretch_rate = 1.0;
  double pitch_semitones = 0.0;

  bool has_noise() const { return noise_kind != NoiseKind::kNone && noise_level > 0.0; }
  bool is_identity() const { return !has_noise() && stretch_rate == 1.0 && pitch_semitones == 0.0; }
  bool operator==(const AugmentSpec&) const = default;
};

std::string spec_to_json(const AugmentSpec& spec);
AugmentSpec spec_from_json(const std::string& text);

struct AugmentPolicy {
  double p_noise = 0.5;
  double p_stretch = 0.3;
  double p_pitch = 0.3;
  // Given noise, probability that it comes from the background bank rather
  // than the Gaussian source.
  double p_background = 0.5;
  std::vector<double> noise_levels{kNoiseLevels.begin(), kNoiseLevels.end()};
  std::vector<double> stretch_rates{kStretchRates.begin(), kStretchRates.end()};
  std::vector<double> pitch_semitones{kPitchSemitones.begin(), kPitchSemitones.end()};

  void validate() const;
};

// Each transform is enabled independently with its probability; its
// parameter is drawn uniformly from the grid.
AugmentSpec sample_augmentation(std::uint64_t seed, const AugmentPolicy& policy);

// Unit-variance Gaussian samples; the stream behind gaussian add_noise.
std::vector<double> gaussian_noise(std::size_t n, std::uint64_t seed);

// out = clip + level * noise / peak(noise), clipped to [-1, 1]. With a
// background clip, a random clip-length segment of it is used (the noise
// clip must be at least as long as `clip`); without one, Gaussian noise.
AudioClip add_noise(const AudioClip& clip, const AudioClip* background, double level, std::uint64_t seed);

struct VocoderConfig {
  std::size_t n_fft = 512;
  std::size_t hop = 128;
};

// Phase-vocoder stretch; output length is round(len / rate), pitch kept.
std::vector<double> phase_vocoder(std::span<const double> samples, double rate, const VocoderConfig& config = {});

// Stretch then re-standardize to one second.
AudioClip time_stretch(const AudioClip& clip, double rate);

// Stretch by 2^(-semitones/12) then linearly resample back to the input
// length, which multiplies every frequency by 2^(semitones/12).
AudioClip pitch_shift(const AudioClip& clip, double semitones);

// Applies stretch, then pitch shift, then noise, and standardizes to one
// second. Background noise is drawn from `noise_bank` (picked by seed).
AudioClip apply(const AudioClip& clip, const AugmentSpec& spec, std::uint64_t seed,
                std::span<const AudioClip> noise_bank = {});

}  // namespace kwsf::augment
