#include "kwsf/features.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "kwsf/error.hpp"
#include "kwsf/fft.hpp"

namespace kwsf::dsp {
namespace {

constexpr char kDumpMagic[8] = {'K', 'W', 'S', 'F', 'F', 'E', 'A', 'T'};

std::vector<double> analysis_window(const FeatureConfig& config) {
  if (config.window == WindowKind::kRectangular) return std::vector<double>(config.window_size, 1.0);
  return hann_window(config.window_size);
}

// Fills `out` (bins x frames, row-major) with the power spectrogram.
void power_into(const AudioClip& clip, const FeatureConfig& config, const std::vector<double>& window,
                Matrix& out) {
  require(clip.size() >= config.window_size, ErrorCode::kTooShort,
          "clip shorter than the analysis window (" + std::to_string(clip.size()) + " < " +
              std::to_string(config.window_size) + ")");
  const std::size_t frames = config.n_frames(clip.size());
  const std::size_t bins = config.n_bins();
  out = Matrix(bins, frames);
  std::vector<Complex> buf(config.n_fft);
  for (std::size_t t = 0; t < frames; ++t) {
    std::fill(buf.begin(), buf.end(), Complex(0.0, 0.0));
    const double* x = clip.samples.data() + t * config.hop;
    for (std::size_t i = 0; i < config.window_size; ++i) buf[i] = x[i] * window[i];
    fft_inplace(buf, false);
    for (std::size_t k = 0; k < bins; ++k) out(k, t) = std::norm(buf[k]);
  }
}

}  // namespace

void FeatureConfig::validate(int sample_rate) const {
  require(sample_rate > 0, ErrorCode::kConfig, "sample rate must be positive");
  require(window_size > 0 && hop > 0, ErrorCode::kConfig, "window_size and hop must be positive");
  require(is_power_of_two(n_fft), ErrorCode::kConfig, "n_fft must be a power of two");
  require(window_size <= n_fft, ErrorCode::kConfig, "window_size must not exceed n_fft");
  require(n_mels >= 1, ErrorCode::kConfig, "n_mels must be >= 1");
  require(f_min > 0.0 && f_min < f_max && f_max <= sample_rate / 2.0, ErrorCode::kConfig,
          "need 0 < f_min < f_max <= sample_rate / 2");
  require(log_floor > 0.0, ErrorCode::kConfig, "log_floor must be positive");
}

std::size_t FeatureConfig::n_frames(std::size_t clip_length) const {
  if (clip_length < window_size) return 0;
  return (clip_length - window_size) / hop + 1;
}

double hz_to_mel(double hz) { return 1127.0 * std::log1p(hz / 700.0); }

double mel_to_hz(double mel) { return 700.0 * std::expm1(mel / 1127.0); }

Matrix power_spectrogram(const AudioClip& clip, const FeatureConfig& config) {
  config.validate(clip.sample_rate);
  Matrix out;
  power_into(clip, config, analysis_window(config), out);
  return out;
}

Matrix mel_filterbank(const FeatureConfig& config, int sample_rate) {
  config.validate(sample_rate);
  const std::size_t bins = config.n_bins();
  const double mel_lo = hz_to_mel(config.f_min);
  const double mel_hi = hz_to_mel(config.f_max);
  const double step = (mel_hi - mel_lo) / static_cast<double>(config.n_mels + 1);
  std::vector<double> edges(config.n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) edges[i] = mel_to_hz(mel_lo + step * static_cast<double>(i));

  Matrix fb(config.n_mels, bins);
  const double bin_hz = static_cast<double>(sample_rate) / static_cast<double>(config.n_fft);
  for (std::size_t m = 0; m < config.n_mels; ++m) {
    const double left = edges[m], center = edges[m + 1], right = edges[m + 2];
    double row_sum = 0.0;
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = bin_hz * static_cast<double>(k);
      double w = 0.0;
      if (f > left && f <= center) {
        w = (f - left) / (center - left);
      } else if (f > center && f < right) {
        w = (right - f) / (right - center);
      }
      fb(m, k) = w;
      row_sum += w;
    }
    if (row_sum <= 0.0) {
      fail(ErrorCode::kResolution, "mel filter " + std::to_string(m) + " covers no FFT bin; reduce n_mels (" +
                                       std::to_string(config.n_mels) + ") or raise n_fft (" +
                                       std::to_string(config.n_fft) + ")");
    }
  }
  return fb;
}

LogMelExtractor::LogMelExtractor(const FeatureConfig& config, int sample_rate)
    : config_(config),
      sample_rate_(sample_rate),
      filterbank_(mel_filterbank(config, sample_rate)),
      window_(analysis_window(config)) {}

Matrix LogMelExtractor::compute(const AudioClip& clip) const {
  require(clip.sample_rate == sample_rate_, ErrorCode::kInvalidArgument, "log_mel: sample rate mismatch");
  Matrix power;
  power_into(clip, config_, window_, power);

  const std::size_t frames = power.cols;
  const std::size_t bins = power.rows;
  Matrix mel(config_.n_mels, frames);
  for (std::size_t m = 0; m < config_.n_mels; ++m) {
    const double* w = &filterbank_.values[m * bins];
    double* dst = &mel.values[m * frames];
    for (std::size_t k = 0; k < bins; ++k) {
      if (w[k] == 0.0) continue;
      const double* src = &power.values[k * frames];
      for (std::size_t t = 0; t < frames; ++t) dst[t] += w[k] * src[t];
    }
  }
  for (double& v : mel.values) v = std::log(std::max(v, config_.log_floor));
  return mel;
}

LogMelSpectrogram LogMelExtractor::operator()(const AudioClip& clip) const {
  return {compute(clip), config_};
}

void LogMelExtractor::extract_into(const AudioClip& clip, std::span<float> out) const {
  const Matrix m = compute(clip);
  require(out.size() == m.values.size(), ErrorCode::kShape, "extract_into: output size mismatch");
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(m.values[i]);
}

LogMelSpectrogram log_mel(const AudioClip& clip, const FeatureConfig& config) {
  return LogMelExtractor(config, clip.sample_rate)(clip);
}

void write_matrix_dump(const std::filesystem::path& path, const Matrix& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  auto put32 = [&](std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
    out.write(reinterpret_cast<const char*>(b), 4);
  };
  out.write(kDumpMagic, 8);
  put32(static_cast<std::uint32_t>(m.rows));
  put32(static_cast<std::uint32_t>(m.cols));
  for (double v : m.values) {
    const auto f = static_cast<float>(v);
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    put32(u);
  }
}

Matrix read_matrix_dump(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open " + path.string());
  char magic[8];
  unsigned char hdr[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kDumpMagic, 8) != 0) fail(ErrorCode::kFormat, "bad feature dump magic");
  if (!in.read(reinterpret_cast<char*>(hdr), 8)) fail(ErrorCode::kFormat, "truncated feature dump");
  auto u32 = [](const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
  };
  Matrix m(u32(hdr), u32(hdr + 4));
  for (double& v : m.values) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) fail(ErrorCode::kFormat, "truncated feature dump");
    const std::uint32_t u = u32(b);
    float f;
    std::memcpy(&f, &u, 4);
    v = f;
  }
  return m;
}

}  // namespace kwsf::dsp
