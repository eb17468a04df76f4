#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace kwsf {

inline constexpr int kSampleRate = 16000;

// Mono PCM audio with samples in [-1, 1].
struct AudioClip {
  std::vector<double> samples;
  int sample_rate = kSampleRate;
  std::optional<std::string> source_path;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
};

// Center-crops or symmetrically zero-pads to exactly `target_rate` samples
// (one second). For odd padding the extra zero goes at the end.
AudioClip standardize_clip(const AudioClip& clip, int target_rate = kSampleRate);

// Linear-interpolation resampling to `target_rate`.
AudioClip resample_linear(const AudioClip& clip, int target_rate);

// Stretches or compresses `samples` to exactly `length` samples by linear
// interpolation over the source index axis.
std::vector<double> resize_linear(const std::vector<double>& samples,
                                  std::size_t length);

double peak_abs(const std::vector<double>& samples);

}  // namespace kwsf
