#include "kwsf/audio.hpp"

#include <algorithm>
#include <cmath>

#include "kwsf/error.hpp"

namespace kwsf {

AudioClip standardize_clip(const AudioClip& clip, int target_rate) {
  require(target_rate > 0, ErrorCode::kInvalidArgument, "standardize_clip: target rate must be positive");
  const auto target = static_cast<std::size_t>(target_rate);
  AudioClip out;
  out.sample_rate = clip.sample_rate;
  out.source_path = clip.source_path;
  const std::size_t n = clip.samples.size();
  if (n == target) {
    out.samples = clip.samples;
  } else if (n > target) {
    const std::size_t start = (n - target) / 2;
    out.samples.assign(clip.samples.begin() + static_cast<std::ptrdiff_t>(start),
                       clip.samples.begin() + static_cast<std::ptrdiff_t>(start + target));
  } else {
    const std::size_t front = (target - n) / 2;
    out.samples.assign(target, 0.0);
    std::copy(clip.samples.begin(), clip.samples.end(),
              out.samples.begin() + static_cast<std::ptrdiff_t>(front));
  }
  return out;
}

std::vector<double> resize_linear(const std::vector<double>& samples, std::size_t length) {
  std::vector<double> out(length, 0.0);
  const std::size_t n = samples.size();
  if (n == 0 || length == 0) return out;
  if (n == length) return samples;
  const double step = static_cast<double>(n) / static_cast<double>(length);
  for (std::size_t i = 0; i < length; ++i) {
    const double x = static_cast<double>(i) * step;
    const auto i0 = static_cast<std::size_t>(x);
    if (i0 + 1 >= n) {
      out[i] = samples[n - 1];
      continue;
    }
    const double frac = x - static_cast<double>(i0);
    out[i] = samples[i0] + frac * (samples[i0 + 1] - samples[i0]);
  }
  return out;
}

AudioClip resample_linear(const AudioClip& clip, int target_rate) {
  require(clip.sample_rate > 0 && target_rate > 0, ErrorCode::kInvalidArgument,
          "resample_linear: sample rates must be positive");
  if (clip.sample_rate == target_rate) return clip;
  AudioClip out;
  out.sample_rate = target_rate;
  out.source_path = clip.source_path;
  const auto length = static_cast<std::size_t>(std::llround(
      static_cast<double>(clip.samples.size()) * target_rate / clip.sample_rate));
  out.samples = resize_linear(clip.samples, length);
  return out;
}

double peak_abs(const std::vector<double>& samples) {
  double peak = 0.0;
  for (double s : samples) peak = std::max(peak, std::abs(s));
  return peak;
}

}  // namespace kwsf
