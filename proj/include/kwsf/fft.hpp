#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace kwsf::dsp {

using Complex = std::complex<double>;

constexpr bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

// In-place iterative radix-2 FFT. Size must be a power of two. The inverse
// transform includes the 1/n scale.
void fft_inplace(std::span<Complex> x, bool inverse = false);

std::vector<Complex> fft(std::span<const Complex> x);
std::vector<Complex> ifft(std::span<const Complex> x);

// Non-negative-frequency half of the FFT of a real frame zero-padded to n_fft.
std::vector<Complex> rfft(std::span<const double> frame, std::size_t n_fft);

// Inverse of rfft for a length-n_fft real signal.
std::vector<double> irfft(std::span<const Complex> half_spectrum, std::size_t n_fft);

// Periodic Hann window of the given length.
std::vector<double> hann_window(std::size_t length);

}  // namespace kwsf::dsp
