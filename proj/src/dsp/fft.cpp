#include "kwsf/fft.hpp"

#include <cmath>
#include <unordered_map>

#include "kwsf/error.hpp"

namespace kwsf::dsp {

namespace {

// exp(-2 pi i k / n) for k < n/2, each entry from cos/sin directly
// (recurrences drift at 1e-9 tolerance).
const std::vector<Complex>& twiddles(std::size_t n) {
  thread_local std::unordered_map<std::size_t, std::vector<Complex>> cache;
  auto& table = cache[n];
  if (table.empty() && n >= 2) {
    table.resize(n / 2);
    for (std::size_t k = 0; k < n / 2; ++k) {
      const double theta = -2.0 * M_PI * static_cast<double>(k) / static_cast<double>(n);
      table[k] = Complex(std::cos(theta), std::sin(theta));
    }
  }
  return table;
}

}  // namespace

void fft_inplace(std::span<Complex> x, bool inverse) {
  const std::size_t n = x.size();
  require(is_power_of_two(n), ErrorCode::kInvalidArgument, "fft: size must be a power of two");
  // Bit-reversal permutation.
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(x[i], x[j]);
  }
  const auto& table = twiddles(n);
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2;
    const std::size_t stride = n / len;
    for (std::size_t k = 0; k < half; ++k) {
      const Complex w = inverse ? std::conj(table[k * stride]) : table[k * stride];
      const double wr = w.real(), wi = w.imag();
      for (std::size_t i = k; i < n; i += len) {
        // Plain arithmetic: std::complex operator* carries NaN-recovery overhead.
        const double ur = x[i].real(), ui = x[i].imag();
        const double xr = x[i + half].real(), xi = x[i + half].imag();
        const double vr = xr * wr - xi * wi, vi = xr * wi + xi * wr;
        x[i] = Complex(ur + vr, ui + vi);
        x[i + half] = Complex(ur - vr, ui - vi);
      }
    }
  }
  if (inverse) {
    const double scale = 1.0 / static_cast<double>(n);
    for (auto& v : x) v *= scale;
  }
}

std::vector<Complex> fft(std::span<const Complex> x) {
  std::vector<Complex> out(x.begin(), x.end());
  fft_inplace(out, false);
  return out;
}

std::vector<Complex> ifft(std::span<const Complex> x) {
  std::vector<Complex> out(x.begin(), x.end());
  fft_inplace(out, true);
  return out;
}

std::vector<Complex> rfft(std::span<const double> frame, std::size_t n_fft) {
  require(frame.size() <= n_fft, ErrorCode::kInvalidArgument, "rfft: frame longer than n_fft");
  std::vector<Complex> buf(n_fft);
  for (std::size_t i = 0; i < frame.size(); ++i) buf[i] = frame[i];
  fft_inplace(buf, false);
  buf.resize(n_fft / 2 + 1);
  return buf;
}

std::vector<double> irfft(std::span<const Complex> half, std::size_t n_fft) {
  require(half.size() == n_fft / 2 + 1, ErrorCode::kInvalidArgument, "irfft: spectrum size mismatch");
  std::vector<Complex> buf(n_fft);
  for (std::size_t k = 0; k < half.size(); ++k) buf[k] = half[k];
  for (std::size_t k = 1; k < n_fft / 2; ++k) buf[n_fft - k] = std::conj(half[k]);
  fft_inplace(buf, true);
  std::vector<double> out(n_fft);
  for (std::size_t i = 0; i < n_fft; ++i) out[i] = buf[i].real();
  return out;
}

std::vector<double> hann_window(std::size_t length) {
  std::vector<double> w(length);
  for (std::size_t i = 0; i < length; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * static_cast<double>(i) / static_cast<double>(length));
  }
  return w;
}

}  // namespace kwsf::dsp
