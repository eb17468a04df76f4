#include "kwsf/trainer/dataset.hpp"

#include <algorithm>
#include <map>
#include <numeric>

#include "kwsf/random.hpp"
#include "kwsf/wav.hpp"

namespace kwsf::trainer {

namespace {

constexpr std::uint64_t kTagLabeledStream = 0x1abe1ed;
constexpr std::uint64_t kTagUnlabeledStream = 0x0f1abe1;
constexpr std::uint64_t kTagBatch = 0xba7c4;
constexpr std::uint64_t kTagSpec = 0x5bec;
constexpr std::uint64_t kTagApply = 0xa991;

AudioClip load_cached_noise(const std::string& path, std::map<std::string, AudioClip>& cache) {
  auto it = cache.find(path);
  if (it == cache.end()) it = cache.emplace(path, load_wav(path)).first;
  return it->second;
}

}  // namespace

const std::vector<Sample>& TrainData::split(Split s) const {
  switch (s) {
    case Split::kTrainLabeled: return labeled;
    case Split::kTrainUnlabeled: return unlabeled;
    case Split::kHoldout: return holdout;
    case Split::kValidation: return validation;
  }
  fail(ErrorCode::kInvalidArgument, "unknown split");
}

AudioClip load_entry_clip(const ManifestEntry& entry) {
  if (auto ref = parse_silence_ref(entry.path)) {
    return materialize_crop(load_wav(ref->noise_path), ref->offset, ref->gain, kSampleRate);
  }
  AudioClip clip = standardize_clip(load_wav(entry.path));
  clip.source_path = entry.path;
  return clip;
}

TrainData load_train_data(std::span<const ManifestEntry> entries, const std::optional<std::filesystem::path>& noise_dir) {
  TrainData data;
  std::map<std::string, AudioClip> noise_cache;
  for (const auto& e : entries) {
    AudioClip clip;
    if (auto ref = parse_silence_ref(e.path)) {
      clip = materialize_crop(load_cached_noise(ref->noise_path, noise_cache), ref->offset, ref->gain, kSampleRate);
      clip.source_path = e.path;
    } else {
      clip = load_entry_clip(e);
    }
    Sample s{std::move(clip), e.label};
    switch (e.split) {
      case Split::kTrainLabeled: data.labeled.push_back(std::move(s)); break;
      case Split::kTrainUnlabeled: data.unlabeled.push_back(std::move(s)); break;
      case Split::kHoldout: data.holdout.push_back(std::move(s)); break;
      case Split::kValidation: data.validation.push_back(std::move(s)); break;
    }
  }
  if (noise_dir && std::filesystem::is_directory(*noise_dir)) {
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(*noise_dir)) {
      if (entry.path().extension() == ".wav") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) data.noise_bank.push_back(load_wav(f));
  }
  return data;
}

FeaturePipeline::FeaturePipeline(const dsp::FeatureConfig& features, const augment::AugmentPolicy& policy,
                                 std::span<const AudioClip> noise_bank)
    : extractor_(features), policy_(policy), noise_bank_(noise_bank.begin(), noise_bank.end()) {
  policy_.validate();
}

augment::AugmentSpec FeaturePipeline::view(const AudioClip& clip, std::uint64_t seed, std::span<float> out) const {
  augment::AugmentSpec spec = augment::sample_augmentation(derive_seed(seed, {kTagSpec}), policy_);
  if (spec.noise_kind == augment::NoiseKind::kBackground && noise_bank_.empty()) {
    spec.noise_kind = augment::NoiseKind::kGaussian;
  }
  if (spec.is_identity()) {
    extractor_.extract_into(clip, out);
  } else {
    extractor_.extract_into(augment::apply(clip, spec, derive_seed(seed, {kTagApply}), noise_bank_), out);
  }
  return spec;
}

nn::Tensor<float> FeaturePipeline::plain_batch(std::span<const Sample> samples) const {
  nn::Tensor<float> out({samples.size(), 1, height(), width()});
  const std::size_t fs = frame_size();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    extractor_.extract_into(samples[i].clip, std::span<float>(out.ptr() + i * fs, fs));
  }
  return out;
}

CyclicSampler::CyclicSampler(std::size_t n, std::uint64_t seed) : n_(n), seed_(seed) {}

std::size_t CyclicSampler::at(std::uint64_t position) {
  require(n_ > 0, ErrorCode::kEmptyDataset, "sampling from an empty pool");
  const std::uint64_t cycle = position / n_;
  if (cycle != cycle_) {
    perm_.resize(n_);
    std::iota(perm_.begin(), perm_.end(), std::size_t{0});
    Rng rng(derive_seed(seed_, {cycle}));
    rng.shuffle(perm_.begin(), perm_.end());
    cycle_ = cycle;
  }
  return perm_[position % n_];
}

BatchSource::BatchSource(const TrainData& data, const FeaturePipeline& pipeline, const BatchConfig& config,
                         std::uint64_t seed)
    : data_(data),
      pipeline_(pipeline),
      config_(config),
      seed_(seed),
      labeled_(data.labeled.size(), derive_seed(seed, {kTagLabeledStream})),
      unlabeled_(data.unlabeled.empty() ? data.labeled.size() : data.unlabeled.size(),
                 derive_seed(seed, {kTagUnlabeledStream})) {
  require(config.labeled_per_batch > 0 && config.labeled_per_batch <= config.batch_size, ErrorCode::kConfig,
          "labeled_per_batch must lie in [1, batch_size]");
  require(!data.labeled.empty(), ErrorCode::kConfig, "the labeled training pool is empty");
}

Minibatch<float> BatchSource::make(std::uint64_t step) {
  const std::size_t n = config_.batch_size, n_lab = config_.labeled_per_batch, n_unlab = n - n_lab;
  const std::size_t fs = pipeline_.frame_size();
  const nn::Shape shape{n, 1, pipeline_.height(), pipeline_.width()};
  Minibatch<float> batch;
  batch.student_view = nn::Tensor<float>(shape);
  if (config_.teacher_views) batch.teacher_view = nn::Tensor<float>(shape);
  const std::uint64_t batch_seed = derive_seed(seed_, {kTagBatch, step});
  const auto& unlabeled_pool = data_.unlabeled.empty() ? data_.labeled : data_.unlabeled;
  for (std::size_t i = 0; i < n; ++i) {
    const Sample* s;
    if (i < n_lab) {
      s = &data_.labeled[labeled_.at(step * n_lab + i)];
      batch.labels.push_back(static_cast<int>(*s->label));
    } else {
      s = &unlabeled_pool[unlabeled_.at(step * n_unlab + (i - n_lab))];
    }
    batch.student_specs.push_back(
        pipeline_.view(s->clip, derive_seed(batch_seed, {i, 0}), std::span<float>(batch.student_view.ptr() + i * fs, fs)));
    if (config_.teacher_views) {
      batch.teacher_specs.push_back(pipeline_.view(s->clip, derive_seed(batch_seed, {i, 1}),
                                                   std::span<float>(batch.teacher_view.ptr() + i * fs, fs)));
    }
  }
  return batch;
}

Minibatch<float> make_minibatch(const TrainData& data, const FeaturePipeline& pipeline, const BatchConfig& config,
                                std::uint64_t seed, std::uint64_t step) {
  BatchSource source(data, pipeline, config, seed);
  return source.make(step);
}

}  // namespace kwsf::trainer
