#pragma once

#include <filesystem>

#include "kwsf/audio.hpp"

namespace kwsf {

// Reads a RIFF/WAVE file with 8/16/24/32-bit integer PCM or 32-bit float
// samples. Multi-channel files keep only the first channel. Integer samples
// are scaled by 1/2^(bits-1), so 16-bit 32767 reads as 32767/32768.
// If `target_rate` is positive and differs from the file rate the clip is
// linearly resampled.
AudioClip load_wav(const std::filesystem::path& path, int target_rate = kSampleRate);

// Parses an in-memory WAV image; `load_wav` is a thin wrapper.
AudioClip decode_wav(const std::vector<unsigned char>& bytes, int target_rate = kSampleRate);

// Writes 16-bit mono PCM. Samples are clamped to [-1, 1] and rounded.
void save_wav(const std::filesystem::path& path, const AudioClip& clip);

std::vector<unsigned char> encode_wav16(const AudioClip& clip);

}  // namespace kwsf
