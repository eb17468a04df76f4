#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kwsf/model/checkpoint.hpp"
#include "kwsf/nn/losses.hpp"
#include "kwsf/trainer/dataset.hpp"

namespace kwsf::trainer {

using model::Checkpoint;
using model::NetworkConfig;
using nn::ParameterSet;

enum class TrainMode { kSupervised, kMeanTeacher };

std::string_view train_mode_name(TrainMode mode);
TrainMode train_mode_from_name(std::string_view name);

struct TrainConfig {
  TrainMode mode = TrainMode::kMeanTeacher;
  std::size_t batch_size = 32;
  // 0 means batch_size / 2; supervised mode always uses batch_size.
  std::size_t labeled_per_batch = 0;
  std::size_t epochs = 10;
  // 0 derives it from the pool sizes (one pass over the larger stream).
  std::size_t steps_per_epoch = 0;
  double learning_rate = 1e-3;
  double consistency_weight = 1.0;  // lambda
  double dropout_rate = 0.1;
  double ema_decay = 0.999;
  nn::KlDirection kl_direction = nn::KlDirection::kTeacherStudent;
  std::uint64_t seed = 0;
  // Also evaluate the student in mean-teacher runs (extra metrics column).
  bool record_student = false;
  // Write real elapsed seconds into the metrics; off keeps files reproducible.
  bool log_wall_time = false;

  void validate() const;
  std::size_t effective_labeled_per_batch() const;
};

Json train_config_to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const Json& j);

// --- one optimization step ---

struct StepOptions {
  TrainMode mode = TrainMode::kMeanTeacher;
  double consistency_weight = 1.0;
  double ema_decay = 0.999;
  nn::KlDirection kl_direction = nn::KlDirection::kTeacherStudent;
  std::uint64_t seed = 0;  // dropout streams for this step
};

struct StepResult {
  double class_loss = 0.0;
  double consistency_loss = 0.0;
  double total_loss = 0.0;
};

// loss = CE(student(labeled student views)) + lambda * KL(teacher || student)
// over every row; one Adam step on the student, then the EMA teacher update.
// The teacher runs with batch statistics and its own dropout draw and gets
// no gradient. Supervised mode skips the teacher forward entirely.
template <typename T>
StepResult train_step(ParameterSet<T>& student, ParameterSet<T>& teacher, const NetworkConfig& config,
                      const Minibatch<T>& batch, const StepOptions& options, nn::AdamState<T>& optimizer);

// --- evaluation ---

struct ConfusionMatrix {
  static constexpr std::size_t kSize = static_cast<std::size_t>(kNumClasses);
  std::array<std::array<std::uint64_t, kSize>, kSize> counts{};  // [true][predicted]

  void add(int truth, int predicted);
  std::uint64_t total() const;
  std::uint64_t correct() const;
  double accuracy() const;
  // Off-diagonal counts whose true or predicted class is `label`.
  std::uint64_t errors_involving(ClassLabel label) const;
  bool operator==(const ConfusionMatrix&) const = default;
};

std::string confusion_csv(const ConfusionMatrix& m);
ConfusionMatrix confusion_from_predictions(std::span<const int> truth, std::span<const int> predicted);

struct EvalResult {
  double accuracy = 0.0;
  ConfusionMatrix confusion;
};

template <typename T>
std::vector<int> predict(const ParameterSet<T>& params, const NetworkConfig& config, const nn::Tensor<T>& features,
                         std::size_t chunk = 64);

// Eval mode, no augmentation. Throws kEmptyDataset for an empty split.
template <typename T>
EvalResult evaluate(const ParameterSet<T>& params, const NetworkConfig& config, const nn::Tensor<T>& features,
                    std::span<const int> labels);

// --- the loop ---

struct EpochMetrics {
  std::size_t epoch = 0;
  double class_loss = 0.0;
  double consistency_loss = 0.0;
  std::optional<double> holdout_accuracy;  // absent when the split is empty
  std::optional<double> validation_accuracy;
  double seconds = 0.0;
  std::optional<double> student_validation_accuracy;
};

struct HyperUpdate {
  std::optional<double> learning_rate;
  std::optional<double> consistency_weight;
  std::optional<double> dropout_rate;
};

// The only cross-thread input to a running loop; drained between steps.
class ControlChannel {
 public:
  void post(const HyperUpdate& update);
  void request_stop();
  std::optional<HyperUpdate> take();
  bool stop_requested() const;

 private:
  mutable std::mutex mutex_;
  std::optional<HyperUpdate> pending_;
  bool stop_ = false;
};

struct PipelineConfig {
  dsp::FeatureConfig features;
  augment::AugmentPolicy augment;
};

class Trainer {
 public:
  // Fresh networks from config.seed. `data` must outlive the trainer.
  Trainer(const NetworkConfig& network, const TrainConfig& config, const TrainData& data,
          const PipelineConfig& pipeline = {});
  // Resumes from a checkpoint; `reseed` replaces the stored RNG base.
  Trainer(const Checkpoint& checkpoint, const TrainConfig& config, const TrainData& data,
          const PipelineConfig& pipeline = {}, std::optional<std::uint64_t> reseed = std::nullopt);

  void apply(const HyperUpdate& update);

  std::size_t steps_per_epoch() const;
  // Trains one epoch, then evaluates holdout and validation.
  EpochMetrics run_epoch(ControlChannel* channel = nullptr);

  // The evaluated model: the teacher in mean-teacher mode, else the student.
  const ParameterSet<float>& model() const;
  const ParameterSet<float>& student() const { return student_; }
  const ParameterSet<float>& teacher() const { return teacher_; }
  const NetworkConfig& network() const { return network_; }
  const TrainConfig& config() const { return config_; }
  std::uint64_t epoch() const { return epoch_; }
  std::uint64_t global_step() const { return global_step_; }

  EvalResult evaluate(Split split) const;
  EvalResult evaluate_params(const ParameterSet<float>& params, Split split) const;
  Checkpoint checkpoint() const;

 private:
  void init_pipeline(const PipelineConfig& pipeline);
  const nn::Tensor<float>& features_for(Split split) const;

  NetworkConfig network_;
  TrainConfig config_;
  const TrainData& data_;
  std::optional<FeaturePipeline> pipeline_;
  ParameterSet<float> student_;
  ParameterSet<float> teacher_;
  nn::AdamState<float> optimizer_;
  std::uint64_t seed_ = 0;
  std::uint64_t epoch_ = 0;
  std::uint64_t global_step_ = 0;
  mutable std::array<std::optional<nn::Tensor<float>>, 4> feature_cache_;
  std::array<std::vector<int>, 4> labels_;
};

struct LoopCallbacks {
  std::function<void(const EpochMetrics&, const Trainer&)> on_epoch;
  ControlChannel* channel = nullptr;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<EpochMetrics> metrics;
};

TrainResult train_loop(const NetworkConfig& network, const TrainConfig& config, const TrainData& data,
                       const PipelineConfig& pipeline = {}, const LoopCallbacks& callbacks = {});

// Columns: epoch,class_loss,cons_loss,holdout_acc,val_acc,seconds
// (+ student_val_acc when requested). Empty splits leave the cell blank.
std::string metrics_csv(std::span<const EpochMetrics> metrics, bool include_student = false);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace kwsf::trainer
