#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "kwsf/audio.hpp"

namespace kwsf::dsp {

enum class WindowKind { kHann, kRectangular };

struct FeatureConfig {
  std::size_t window_size = 400;  // 25 ms at 16 kHz
  std::size_t hop = 160;          // 10 ms
  std::size_t n_fft = 512;
  std::size_t n_mels = 40;
  double f_min = 20.0;
  double f_max = 7600.0;
  double log_floor = 1e-10;
  WindowKind window = WindowKind::kHann;  // rectangular is a debug mode

  // Throws kConfig when the invariants do not hold for this sample rate.
  void validate(int sample_rate) const;
  std::size_t n_bins() const { return n_fft / 2 + 1; }
  std::size_t n_frames(std::size_t clip_length) const;
};

// Dense row-major real matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), values(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

struct LogMelSpectrogram {
  Matrix values;  // n_mels x n_frames
  FeatureConfig config;
};

double hz_to_mel(double hz);
double mel_to_hz(double mel);

// (n_fft/2 + 1) x n_frames matrix of |FFT(window * frame)|^2.
Matrix power_spectrogram(const AudioClip& clip, const FeatureConfig& config);

// n_mels x (n_fft/2 + 1) triangular filters, peaks equally spaced in mel.
Matrix mel_filterbank(const FeatureConfig& config, int sample_rate);

LogMelSpectrogram log_mel(const AudioClip& clip, const FeatureConfig& config);

// Caches the window and filterbank; safe to share read-only between threads.
class LogMelExtractor {
 public:
  LogMelExtractor(const FeatureConfig& config, int sample_rate = kSampleRate);

  LogMelSpectrogram operator()(const AudioClip& clip) const;

  // Writes n_mels * n_frames floats (row-major) into `out`.
  void extract_into(const AudioClip& clip, std::span<float> out) const;

  const FeatureConfig& config() const { return config_; }
  const Matrix& filterbank() const { return filterbank_; }
  std::size_t n_frames() const { return config_.n_frames(static_cast<std::size_t>(sample_rate_)); }

 private:
  Matrix compute(const AudioClip& clip) const;

  FeatureConfig config_;
  int sample_rate_;
  Matrix filterbank_;
  std::vector<double> window_;
};

// Debug dump: 8-byte magic "KWSFFEAT", u32 rows, u32 cols, then
// little-endian float32 values row-major.
void write_matrix_dump(const std::filesystem::path& path, const Matrix& m);
Matrix read_matrix_dump(const std::filesystem::path& path);

}  // namespace kwsf::dsp
