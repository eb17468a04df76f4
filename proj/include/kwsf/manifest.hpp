#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kwsf/audio.hpp"
#include "kwsf/labels.hpp"

namespace kwsf {

enum class Split { kTrainLabeled, kTrainUnlabeled, kHoldout, kValidation };

std::string_view split_name(Split split);
Split split_from_name(std::string_view name);

struct ManifestEntry {
  std::string path;
  std::optional<std::string> word;
  std::optional<ClassLabel> label;  // absent exactly when split == kTrainUnlabeled
  Split split = Split::kTrainLabeled;

  bool operator==(const ManifestEntry&) const = default;
};

struct ManifestConfig {
  std::uint64_t seed = 0;
  // Fraction of in-split training files per word that keep their label.
  double labeled_fraction = 1.0;
  // Speaker-hash fractions; validation_fraction is ignored when a
  // validation list is given.
  double holdout_fraction = 0.1;
  double validation_fraction = 0.1;
  std::optional<std::filesystem::path> validation_list;
  // Words whose training files are all unlabeled (never seen with a label).
  std::vector<std::string> unlabeled_words;
  // Route every out-of-vocabulary training file to the unlabeled pool.
  bool oov_to_unlabeled = false;
  // Silence entries per labeled split, as a fraction of that split's size.
  double silence_fraction = 0.1;
};

// Builds the split manifest for a `<root>/<word>/<file>.wav` tree. Silence
// entries are crops of `<root>/_background_noise_/*.wav`, encoded in the path
// as `<noise path>#offset=<n>&gain=<g>`. Output is sorted and deterministic
// under (tree contents, config).
std::vector<ManifestEntry> build_manifest(const std::filesystem::path& root,
                                          const ManifestConfig& config);

// Speech Commands convention: `<speaker>_nohash_<k>.wav`. Falls back to the
// part of the stem before the first '_' (or the whole stem).
std::string speaker_id(std::string_view filename);

std::string serialize_manifest(std::span<const ManifestEntry> entries);
std::vector<ManifestEntry> parse_manifest(std::string_view jsonl);
void write_manifest(const std::filesystem::path& path, std::span<const ManifestEntry> entries);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);

// --- silence synthesis ---

struct SilenceCrop {
  std::size_t noise_index = 0;
  std::size_t offset = 0;
  double gain = 0.0;
};

// Picks `count` random one-second crops (length `crop_length`) from noise
// clips with the given lengths; clips shorter than a crop are never chosen.
std::vector<SilenceCrop> plan_silence_crops(std::span<const std::size_t> noise_lengths,
                                            std::size_t count, std::size_t crop_length,
                                            std::uint64_t seed);

std::vector<AudioClip> make_silence_clips(const std::vector<AudioClip>& noise_clips,
                                          std::size_t count, std::uint64_t seed,
                                          int sample_rate = kSampleRate);

AudioClip materialize_crop(const AudioClip& noise, std::size_t offset, double gain,
                           std::size_t length);

struct SilenceRef {
  std::string noise_path;
  std::size_t offset = 0;
  double gain = 0.0;
};

std::string encode_silence_ref(const SilenceRef& ref);
std::optional<SilenceRef> parse_silence_ref(std::string_view path);

std::vector<std::filesystem::path> list_noise_files(const std::filesystem::path& root);

}  // namespace kwsf
