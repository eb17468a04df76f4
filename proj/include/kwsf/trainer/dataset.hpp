#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "kwsf/augment.hpp"
#include "kwsf/features.hpp"
#include "kwsf/manifest.hpp"
#include "kwsf/nn/tensor.hpp"

namespace kwsf::trainer {

struct Sample {
  AudioClip clip;  // standardized to one second
  std::optional<ClassLabel> label;
};

// Manifest entries turned into audio, grouped by split.
struct TrainData {
  std::vector<Sample> labeled;
  std::vector<Sample> unlabeled;
  std::vector<Sample> holdout;
  std::vector<Sample> validation;
  std::vector<AudioClip> noise_bank;  // background noise for augmentation

  const std::vector<Sample>& split(Split s) const;
};

// Decodes a manifest path, materializing `#offset=..&gain=..` silence refs.
AudioClip load_entry_clip(const ManifestEntry& entry);

// Noise files are read from `noise_dir` when given (usually
// `<root>/_background_noise_`).
TrainData load_train_data(std::span<const ManifestEntry> entries,
                          const std::optional<std::filesystem::path>& noise_dir = std::nullopt);

// Featurizes clips, optionally under a sampled augmentation.
class FeaturePipeline {
 public:
  FeaturePipeline(const dsp::FeatureConfig& features, const augment::AugmentPolicy& policy,
                  std::span<const AudioClip> noise_bank);

  std::size_t height() const { return extractor_.config().n_mels; }
  std::size_t width() const { return extractor_.n_frames(); }
  std::size_t frame_size() const { return height() * width(); }
  const augment::AugmentPolicy& policy() const { return policy_; }

  // One view: draws an AugmentSpec from `seed` and writes frame_size floats.
  augment::AugmentSpec view(const AudioClip& clip, std::uint64_t seed, std::span<float> out) const;

  // All samples unaugmented, N x 1 x H x W.
  nn::Tensor<float> plain_batch(std::span<const Sample> samples) const;

 private:
  dsp::LogMelExtractor extractor_;
  augment::AugmentPolicy policy_;
  std::vector<AudioClip> noise_bank_;
};

// Endless stream of back-to-back seeded permutations of [0, n). Element p is
// a pure function of (n, seed, p), which lets a run resume mid-stream.
class CyclicSampler {
 public:
  CyclicSampler(std::size_t n, std::uint64_t seed);
  std::size_t at(std::uint64_t position);
  std::size_t size() const { return n_; }

 private:
  std::size_t n_;
  std::uint64_t seed_;
  std::uint64_t cycle_ = ~std::uint64_t{0};
  std::vector<std::size_t> perm_;
};

struct BatchConfig {
  std::size_t batch_size = 32;
  std::size_t labeled_per_batch = 16;
  // Teacher views are only drawn when a consistency loss needs them.
  bool teacher_views = true;
};

template <typename T>
struct Minibatch {
  nn::Tensor<T> student_view;  // N x 1 x H x W, labeled rows first
  nn::Tensor<T> teacher_view;  // empty unless requested
  std::vector<int> labels;     // one per labeled row
  std::vector<augment::AugmentSpec> student_specs;
  std::vector<augment::AugmentSpec> teacher_specs;

  std::size_t size() const { return student_view.empty() ? 0 : student_view.dim(0); }
  std::size_t n_labeled() const { return labels.size(); }

  template <typename U>
  Minibatch<U> cast() const {
    return {student_view.template cast<U>(), teacher_view.template cast<U>(), labels, student_specs,
            teacher_specs};
  }
};

// Batch number `step` of the stream: labeled_per_batch labeled samples, then
// batch_size - labeled_per_batch unlabeled ones, each with two independently
// augmented views. When the unlabeled pool is empty its slots are drawn from
// the labeled pool with labels withheld.
class BatchSource {
 public:
  BatchSource(const TrainData& data, const FeaturePipeline& pipeline, const BatchConfig& config,
              std::uint64_t seed);

  Minibatch<float> make(std::uint64_t step);
  const BatchConfig& config() const { return config_; }

 private:
  const TrainData& data_;
  const FeaturePipeline& pipeline_;
  BatchConfig config_;
  std::uint64_t seed_;
  CyclicSampler labeled_;
  CyclicSampler unlabeled_;
};

// One-shot form of BatchSource::make.
Minibatch<float> make_minibatch(const TrainData& data, const FeaturePipeline& pipeline, const BatchConfig& config,
                                std::uint64_t seed, std::uint64_t step = 0);

}  // namespace kwsf::trainer
