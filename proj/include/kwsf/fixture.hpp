#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "kwsf/audio.hpp"

namespace kwsf {

// Synthetic stand-in for a Speech Commands tree: each "word" is a tone or
// chirp pattern with per-utterance jitter in pitch, timing, level and noise.
struct FixtureConfig {
  std::size_t n_per_class = 20;
  std::uint64_t seed = 0;
  std::vector<std::string> words = {"yes", "no", "up"};
  std::vector<std::string> oov_words = {"bed", "cat", "house"};
  std::size_t n_oov_per_word = 10;
  std::size_t n_speakers = 12;
  std::size_t n_noise_files = 2;
  double noise_seconds = 3.0;
};

// Renders one utterance of `word`; deterministic under seed.
AudioClip synthesize_word(const std::string& word, std::uint64_t seed);

// Writes `<out>/<word>/<speaker>_nohash_<k>.wav` and
// `<out>/_background_noise_/*.wav`. Returns the number of word files written.
std::size_t write_fixture(const std::filesystem::path& out, const FixtureConfig& config);

}  // namespace kwsf
