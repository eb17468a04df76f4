#include "kwsf/manifest.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "kwsf/error.hpp"
#include "kwsf/random.hpp"
#include "kwsf/wav.hpp"

namespace fs = std::filesystem;

namespace kwsf {
namespace {

constexpr const char* kNoiseDir = "_background_noise_";

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Uniform in [0, 1), a pure function of (speaker, seed).
double speaker_bucket(std::string_view speaker, std::uint64_t seed) {
  const std::uint64_t h = derive_seed(seed, {fnv1a(speaker), 0x5eedULL});
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

bool has_wav_extension(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".wav";
}

std::vector<fs::path> sorted_children(const fs::path& dir, bool want_dirs) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (want_dirs ? e.is_directory() : (e.is_regular_file() && has_wav_extension(e.path()))) {
      out.push_back(e.path());
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::set<std::string> read_validation_list(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "cannot open validation list " + path.string());
  std::set<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (!line.empty()) out.insert(line);
  }
  return out;
}

int split_order(Split s) { return static_cast<int>(s); }

}  // namespace

std::string_view split_name(Split split) {
  switch (split) {
    case Split::kTrainLabeled: return "train_labeled";
    case Split::kTrainUnlabeled: return "train_unlabeled";
    case Split::kHoldout: return "holdout";
    case Split::kValidation: return "validation";
  }
  return "?";
}

Split split_from_name(std::string_view name) {
  for (Split s : {Split::kTrainLabeled, Split::kTrainUnlabeled, Split::kHoldout, Split::kValidation}) {
    if (split_name(s) == name) return s;
  }
  fail(ErrorCode::kFormat, "unknown split name '" + std::string(name) + "'");
}

std::string speaker_id(std::string_view filename) {
  std::string_view stem = filename;
  if (const auto slash = stem.find_last_of('/'); slash != std::string_view::npos) stem = stem.substr(slash + 1);
  if (const auto dot = stem.rfind('.'); dot != std::string_view::npos) stem = stem.substr(0, dot);
  if (const auto pos = stem.find("_nohash_"); pos != std::string_view::npos) return std::string(stem.substr(0, pos));
  if (const auto pos = stem.find('_'); pos != std::string_view::npos) return std::string(stem.substr(0, pos));
  return std::string(stem);
}

std::vector<fs::path> list_noise_files(const fs::path& root) {
  const fs::path dir = root / kNoiseDir;
  if (!fs::is_directory(dir)) return {};
  return sorted_children(dir, false);
}

std::vector<ManifestEntry> build_manifest(const fs::path& root, const ManifestConfig& config) {
  require(fs::is_directory(root), ErrorCode::kIo, "dataset root not found: " + root.string());
  require(config.labeled_fraction > 0.0 && config.labeled_fraction <= 1.0, ErrorCode::kInvalidArgument,
          "labeled_fraction must be in (0, 1]");
  const double validation_fraction = config.validation_list ? 0.0 : config.validation_fraction;
  require(config.holdout_fraction >= 0.0 && validation_fraction >= 0.0 &&
              config.holdout_fraction + validation_fraction < 1.0,
          ErrorCode::kInvalidArgument, "holdout + validation fractions must lie in [0, 1)");
  require(config.silence_fraction >= 0.0, ErrorCode::kInvalidArgument, "silence_fraction must be >= 0");

  std::set<std::string> validation_files;
  if (config.validation_list) validation_files = read_validation_list(*config.validation_list);
  const std::set<std::string> unlabeled_words(config.unlabeled_words.begin(), config.unlabeled_words.end());

  struct RawFile {
    std::string path, relative, word, speaker;
  };
  std::vector<RawFile> files;
  for (const fs::path& dir : sorted_children(root, true)) {
    const std::string word = dir.filename().string();
    if (word.empty() || word.front() == '_') continue;
    for (const fs::path& file : sorted_children(dir, false)) {
      const std::string name = file.filename().string();
      files.push_back({(root / word / name).generic_string(), word + "/" + name, word, speaker_id(name)});
    }
  }
  require(!files.empty(), ErrorCode::kEmptyDataset, "no <word>/<file>.wav entries under " + root.string());

  std::set<std::string> validation_speakers;
  for (const auto& f : files) {
    if (validation_files.count(f.relative)) validation_speakers.insert(f.speaker);
  }

  std::vector<ManifestEntry> entries;
  std::map<std::string, std::vector<std::size_t>> train_by_word;  // word -> index into `files`
  for (std::size_t i = 0; i < files.size(); ++i) {
    const auto& f = files[i];
    Split split = Split::kTrainLabeled;
    if (config.validation_list) {
      if (validation_speakers.count(f.speaker)) {
        split = Split::kValidation;
      } else if (speaker_bucket(f.speaker, config.seed) < config.holdout_fraction) {
        split = Split::kHoldout;
      }
    } else {
      const double u = speaker_bucket(f.speaker, config.seed);
      if (u < validation_fraction) {
        split = Split::kValidation;
      } else if (u < validation_fraction + config.holdout_fraction) {
        split = Split::kHoldout;
      }
    }
    if (split != Split::kTrainLabeled) {
      entries.push_back({f.path, f.word, map_word_to_class(f.word), split});
      continue;
    }
    const bool oov = !is_target_word(f.word);
    if (unlabeled_words.count(f.word) || (oov && config.oov_to_unlabeled)) {
      entries.push_back({f.path, std::nullopt, std::nullopt, Split::kTrainUnlabeled});
    } else {
      train_by_word[f.word].push_back(i);
    }
  }

  // Per-word stratified label stripping keeps every trained word represented.
  for (auto& [word, indices] : train_by_word) {
    Rng rng(derive_seed(config.seed, {fnv1a(word), 0x1abe1ULL}));
    rng.shuffle(indices.begin(), indices.end());
    const auto n = indices.size();
    auto keep = static_cast<std::size_t>(std::llround(config.labeled_fraction * static_cast<double>(n)));
    keep = std::clamp<std::size_t>(keep, 1, n);
    for (std::size_t k = 0; k < n; ++k) {
      const auto& f = files[indices[k]];
      if (k < keep) {
        entries.push_back({f.path, f.word, map_word_to_class(f.word), Split::kTrainLabeled});
      } else {
        entries.push_back({f.path, std::nullopt, std::nullopt, Split::kTrainUnlabeled});
      }
    }
  }

  // Silence entries, one batch per labeled split.
  const auto noise_files = list_noise_files(root);
  if (!noise_files.empty() && config.silence_fraction > 0.0) {
    std::vector<std::size_t> lengths;
    std::vector<std::string> noise_paths;
    for (const auto& p : noise_files) {
      lengths.push_back(load_wav(p).size());
      noise_paths.push_back(p.generic_string());
    }
    for (Split split : {Split::kTrainLabeled, Split::kHoldout, Split::kValidation}) {
      const auto n_split = static_cast<std::size_t>(
          std::count_if(entries.begin(), entries.end(), [&](const ManifestEntry& e) { return e.split == split; }));
      const auto count = static_cast<std::size_t>(std::llround(config.silence_fraction * static_cast<double>(n_split)));
      if (count == 0) continue;
      const auto crops = plan_silence_crops(lengths, count, kSampleRate,
                                            derive_seed(config.seed, {0x511e7ceULL, static_cast<std::uint64_t>(split)}));
      for (const auto& c : crops) {
        entries.push_back({encode_silence_ref({noise_paths[c.noise_index], c.offset, c.gain}),
                           std::string(kSilenceMarker), ClassLabel::kSilence, split});
      }
    }
  }

  std::stable_sort(entries.begin(), entries.end(), [](const ManifestEntry& a, const ManifestEntry& b) {
    if (a.split != b.split) return split_order(a.split) < split_order(b.split);
    return a.path < b.path;
  });
  return entries;
}

std::string serialize_manifest(std::span<const ManifestEntry> entries) {
  std::string out;
  for (const auto& e : entries) {
    nlohmann::ordered_json j;
    j["path"] = e.path;
    j["word"] = e.word ? nlohmann::ordered_json(*e.word) : nlohmann::ordered_json(nullptr);
    j["label"] = e.label ? nlohmann::ordered_json(std::string(class_name(*e.label)))
                         : nlohmann::ordered_json(nullptr);
    j["split"] = std::string(split_name(e.split));
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<ManifestEntry> parse_manifest(std::string_view jsonl) {
  std::vector<ManifestEntry> out;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < jsonl.size()) {
    std::size_t end = jsonl.find('\n', start);
    if (end == std::string_view::npos) end = jsonl.size();
    const std::string_view line = jsonl.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      ManifestEntry e;
      e.path = j.at("path").get<std::string>();
      if (j.contains("word") && !j["word"].is_null()) e.word = j["word"].get<std::string>();
      if (j.contains("label") && !j["label"].is_null()) {
        const auto name = j["label"].get<std::string>();
        e.label = class_from_name(name);
        if (!e.label) fail(ErrorCode::kFormat, "unknown label '" + name + "'");
      }
      e.split = split_from_name(j.at("split").get<std::string>());
      if (e.label.has_value() == (e.split == Split::kTrainUnlabeled)) {
        fail(ErrorCode::kFormat, "label must be present iff split is not train_unlabeled");
      }
      out.push_back(std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      fail(ErrorCode::kFormat, "manifest line " + std::to_string(line_no) + ": " + ex.what());
    } catch (const Error& ex) {
      fail(ex.code(), "manifest line " + std::to_string(line_no) + ": " + ex.what());
    }
  }
  return out;
}

void write_manifest(const fs::path& path, std::span<const ManifestEntry> entries) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  out << serialize_manifest(entries);
  if (!out) fail(ErrorCode::kIo, "write failed for " + path.string());
}

std::vector<ManifestEntry> read_manifest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open manifest " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_manifest(ss.str());
}

std::vector<SilenceCrop> plan_silence_crops(std::span<const std::size_t> noise_lengths, std::size_t count,
                                            std::size_t crop_length, std::uint64_t seed) {
  if (count == 0) return {};
  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < noise_lengths.size(); ++i) {
    if (noise_lengths[i] >= crop_length) usable.push_back(i);
  }
  require(!usable.empty(), ErrorCode::kInsufficientNoise, "no noise clip is at least one second long");
  Rng rng(seed);
  std::vector<SilenceCrop> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    SilenceCrop c;
    c.noise_index = usable[rng.index(usable.size())];
    c.offset = rng.index(noise_lengths[c.noise_index] - crop_length + 1);
    c.gain = rng.uniform();
    out.push_back(c);
  }
  return out;
}

AudioClip materialize_crop(const AudioClip& noise, std::size_t offset, double gain, std::size_t length) {
  require(offset + length <= noise.size(), ErrorCode::kInsufficientNoise, "silence crop exceeds noise clip");
  AudioClip out;
  out.sample_rate = noise.sample_rate;
  out.samples.assign(noise.samples.begin() + static_cast<std::ptrdiff_t>(offset),
                     noise.samples.begin() + static_cast<std::ptrdiff_t>(offset + length));
  for (double& s : out.samples) s *= gain;
  return out;
}

std::vector<AudioClip> make_silence_clips(const std::vector<AudioClip>& noise_clips, std::size_t count,
                                          std::uint64_t seed, int sample_rate) {
  if (count == 0) return {};
  require(!noise_clips.empty(), ErrorCode::kInsufficientNoise, "no noise clips given");
  std::vector<std::size_t> lengths;
  for (const auto& c : noise_clips) lengths.push_back(c.size());
  const auto length = static_cast<std::size_t>(sample_rate);
  std::vector<AudioClip> out;
  for (const auto& c : plan_silence_crops(lengths, count, length, seed)) {
    out.push_back(materialize_crop(noise_clips[c.noise_index], c.offset, c.gain, length));
  }
  return out;
}

std::string encode_silence_ref(const SilenceRef& ref) {
  char gain[40];
  std::snprintf(gain, sizeof gain, "%.17g", ref.gain);
  return ref.noise_path + "#offset=" + std::to_string(ref.offset) + "&gain=" + gain;
}

std::optional<SilenceRef> parse_silence_ref(std::string_view path) {
  const auto hash = path.rfind("#offset=");
  if (hash == std::string_view::npos) return std::nullopt;
  const auto amp = path.find("&gain=", hash);
  if (amp == std::string_view::npos) return std::nullopt;
  SilenceRef ref;
  ref.noise_path = std::string(path.substr(0, hash));
  try {
    ref.offset = std::stoull(std::string(path.substr(hash + 8, amp - hash - 8)));
    ref.gain = std::stod(std::string(path.substr(amp + 6)));
  } catch (const std::exception&) {
    return std::nullopt;
  }
  return ref;
}

}  // namespace kwsf
