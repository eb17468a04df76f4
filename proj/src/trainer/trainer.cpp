#include "kwsf/trainer/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "kwsf/random.hpp"

namespace kwsf::trainer {

namespace {

constexpr std::uint64_t kTagStudentDropout = 0x57d;
constexpr std::uint64_t kTagTeacherDropout = 0x7ea;
constexpr std::uint64_t kTagInit = 0x1417;
constexpr std::uint64_t kTagBatches = 0xba7;
constexpr std::uint64_t kTagStep = 0x57e9;

template <typename T>
nn::Tensor<T> first_rows(const nn::Tensor<T>& x, std::size_t rows) {
  const std::size_t cols = x.size() / x.dim(0);
  nn::Shape shape = x.shape();
  shape[0] = rows;
  return nn::Tensor<T>(shape, std::vector<T>(x.values().begin(), x.values().begin() + rows * cols));
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::size_t split_index(Split s) { return static_cast<std::size_t>(s); }

}  // namespace

std::string_view train_mode_name(TrainMode mode) {
  return mode == TrainMode::kSupervised ? "supervised" : "mean_teacher";
}

TrainMode train_mode_from_name(std::string_view name) {
  if (name == "supervised") return TrainMode::kSupervised;
  if (name == "mean_teacher") return TrainMode::kMeanTeacher;
  fail(ErrorCode::kConfig, "unknown training mode '" + std::string(name) + "'");
}

void TrainConfig::validate() const {
  require(batch_size >= 1, ErrorCode::kConfig, "batch_size must be positive");
  require(labeled_per_batch <= batch_size, ErrorCode::kConfig, "labeled_per_batch must not exceed batch_size");
  require(effective_labeled_per_batch() >= 1, ErrorCode::kConfig, "labeled_per_batch must be positive");
  require(learning_rate > 0.0 && std::isfinite(learning_rate), ErrorCode::kConfig, "learning_rate must be positive");
  require(consistency_weight >= 0.0 && std::isfinite(consistency_weight), ErrorCode::kConfig,
          "consistency_weight must be >= 0");
  require(dropout_rate >= 0.0 && dropout_rate < 1.0, ErrorCode::kConfig, "dropout_rate must lie in [0, 1)");
  require(ema_decay >= 0.0 && ema_decay <= 1.0, ErrorCode::kConfig, "ema_decay must lie in [0, 1]");
}

std::size_t TrainConfig::effective_labeled_per_batch() const {
  if (mode == TrainMode::kSupervised) return batch_size;
  return labeled_per_batch == 0 ? batch_size / 2 : labeled_per_batch;
}

Json train_config_to_json(const TrainConfig& c) {
  Json j;
  j["mode"] = train_mode_name(c.mode);
  j["batch_size"] = c.batch_size;
  j["labeled_per_batch"] = c.labeled_per_batch;
  j["epochs"] = c.epochs;
  j["steps_per_epoch"] = c.steps_per_epoch;
  j["learning_rate"] = c.learning_rate;
  j["consistency_weight"] = c.consistency_weight;
  j["dropout_rate"] = c.dropout_rate;
  j["ema_decay"] = c.ema_decay;
  j["kl_direction"] = c.kl_direction == nn::KlDirection::kTeacherStudent ? "teacher_student" : "student_teacher";
  j["seed"] = c.seed;
  j["record_student"] = c.record_student;
  j["log_wall_time"] = c.log_wall_time;
  return j;
}

TrainConfig train_config_from_json(const Json& j) {
  TrainConfig c;
  JsonReader r(j, "train");
  std::string mode(train_mode_name(c.mode));
  std::string direction = "teacher_student";
  r.get("mode", mode)
      .get("batch_size", c.batch_size)
      .get("labeled_per_batch", c.labeled_per_batch)
      .get("epochs", c.epochs)
      .get("steps_per_epoch", c.steps_per_epoch)
      .get("learning_rate", c.learning_rate)
      .get("consistency_weight", c.consistency_weight)
      .get("dropout_rate", c.dropout_rate)
      .get("ema_decay", c.ema_decay)
      .get("kl_direction", direction)
      .get("seed", c.seed)
      .get("record_student", c.record_student)
      .get("log_wall_time", c.log_wall_time);
  r.finish();
  c.mode = train_mode_from_name(mode);
  if (direction == "teacher_student") {
    c.kl_direction = nn::KlDirection::kTeacherStudent;
  } else if (direction == "student_teacher") {
    c.kl_direction = nn::KlDirection::kStudentTeacher;
  } else {
    fail(ErrorCode::kConfig, "train.kl_direction must be teacher_student or student_teacher");
  }
  c.validate();
  return c;
}

template <typename T>
StepResult train_step(ParameterSet<T>& student, ParameterSet<T>& teacher, const NetworkConfig& config,
                      const Minibatch<T>& batch, const StepOptions& options, nn::AdamState<T>& optimizer) {
  require(student.same_schema(teacher), ErrorCode::kShape, "train_step: student and teacher schemas differ");
  const std::size_t n = batch.size();
  const std::size_t n_lab = batch.n_labeled();
  require(n >= 2, ErrorCode::kDegenerateBatch, "train_step needs at least two samples for batch norm");
  require(n_lab >= 1 && n_lab <= n, ErrorCode::kInvalidArgument, "train_step: batch has no labeled rows");
  const bool mean_teacher = options.mode == TrainMode::kMeanTeacher;
  require(mean_teacher || n_lab == n, ErrorCode::kConfig, "supervised batches must be fully labeled");

  model::ForwardCache<T> cache;
  const nn::Tensor<T> logits = model::forward(
      student, config, batch.student_view, {nn::Mode::kTrain, derive_seed(options.seed, {kTagStudentDropout})}, &cache);

  StepResult result;
  nn::Tensor<T> grad(logits.shape());
  {
    auto ce = n_lab == n ? nn::cross_entropy(logits, batch.labels)
                         : nn::cross_entropy(first_rows(logits, n_lab), batch.labels);
    result.class_loss = ce.loss;
    std::copy(ce.grad.values().begin(), ce.grad.values().end(), grad.ptr());
  }
  if (mean_teacher) {
    require(batch.teacher_view.shape() == batch.student_view.shape(), ErrorCode::kShape,
            "train_step: mean-teacher batches need teacher views");
    const nn::Tensor<T> teacher_logits =
        model::forward(teacher, config, batch.teacher_view,
                       {nn::Mode::kTrain, derive_seed(options.seed, {kTagTeacherDropout})});
    auto kl = nn::kl_consistency(teacher_logits, logits, options.kl_direction);
    result.consistency_loss = kl.loss;
    // Skipping the zero-weight term keeps lambda = 0 bitwise equal to supervised.
    if (options.consistency_weight != 0.0) {
      const T w = static_cast<T>(options.consistency_weight);
      for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += w * kl.grad[i];
    }
  }
  result.total_loss = result.class_loss + options.consistency_weight * result.consistency_loss;
  if (!std::isfinite(result.total_loss)) {
    fail(ErrorCode::kDiverged, "non-finite loss (class " + fmt(result.class_loss) + ", consistency " +
                                   fmt(result.consistency_loss) + ", lr " + fmt(optimizer.learning_rate) +
                                   ", adam step " + std::to_string(optimizer.step) + ")");
  }

  student.zero_grad();
  model::backward(student, config, cache, grad);
  nn::adam_step(student, optimizer);
  model::apply_running_stats(student, config, cache);
  nn::ema_update(teacher, student, options.ema_decay);
  return result;
}

void ConfusionMatrix::add(int truth, int predicted) {
  require(truth >= 0 && truth < kNumClasses && predicted >= 0 && predicted < kNumClasses,
          ErrorCode::kInvalidArgument, "confusion: class index out of range");
  ++counts[static_cast<std::size_t>(truth)][static_cast<std::size_t>(predicted)];
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (const auto& row : counts) {
    for (auto c : row) t += c;
  }
  return t;
}

std::uint64_t ConfusionMatrix::correct() const {
  std::uint64_t t = 0;
  for (std::size_t i = 0; i < kSize; ++i) t += counts[i][i];
  return t;
}

double ConfusionMatrix::accuracy() const {
  const auto t = total();
  require(t > 0, ErrorCode::kEmptyDataset, "accuracy of an empty confusion matrix");
  return static_cast<double>(correct()) / static_cast<double>(t);
}

std::uint64_t ConfusionMatrix::errors_involving(ClassLabel label) const {
  const auto k = static_cast<std::size_t>(label);
  std::uint64_t t = 0;
  for (std::size_t i = 0; i < kSize; ++i) {
    if (i == k) continue;
    t += counts[k][i] + counts[i][k];
  }
  return t;
}

std::string confusion_csv(const ConfusionMatrix& m) {
  std::ostringstream out;
  out << "true\\pred";
  for (auto name : kClassNames) out << ',' << name;
  out << '\n';
  for (std::size_t i = 0; i < ConfusionMatrix::kSize; ++i) {
    out << kClassNames[i];
    for (auto c : m.counts[i]) out << ',' << c;
    out << '\n';
  }
  return out.str();
}

ConfusionMatrix confusion_from_predictions(std::span<const int> truth, std::span<const int> predicted) {
  require(truth.size() == predicted.size(), ErrorCode::kInvalidArgument, "truth/prediction length mismatch");
  ConfusionMatrix m;
  for (std::size_t i = 0; i < truth.size(); ++i) m.add(truth[i], predicted[i]);
  return m;
}

template <typename T>
std::vector<int> predict(const ParameterSet<T>& params, const NetworkConfig& config, const nn::Tensor<T>& features,
                         std::size_t chunk) {
  const std::size_t n = features.empty() ? 0 : features.dim(0);
  const std::size_t fs = n ? features.size() / n : 0;
  std::vector<int> out;
  out.reserve(n);
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t m = std::min(chunk, n - start);
    nn::Shape shape = features.shape();
    shape[0] = m;
    nn::Tensor<T> part(shape, std::vector<T>(features.values().begin() + start * fs,
                                             features.values().begin() + (start + m) * fs));
    const auto logits = model::forward(params, config, part, {nn::Mode::kEval, 0});
    const std::size_t k = logits.dim(1);
    for (std::size_t i = 0; i < m; ++i) {
      const T* row = logits.ptr() + i * k;
      out.push_back(static_cast<int>(std::max_element(row, row + k) - row));
    }
  }
  return out;
}

template <typename T>
EvalResult evaluate(const ParameterSet<T>& params, const NetworkConfig& config, const nn::Tensor<T>& features,
                    std::span<const int> labels) {
  require(!labels.empty(), ErrorCode::kEmptyDataset, "evaluate: empty split");
  require(!features.empty() && features.dim(0) == labels.size(), ErrorCode::kShape,
          "evaluate: feature/label count mismatch");
  const auto predicted = predict(params, config, features);
  EvalResult r;
  r.confusion = confusion_from_predictions(labels, predicted);
  r.accuracy = r.confusion.accuracy();
  return r;
}

void ControlChannel::post(const HyperUpdate& update) {
  std::lock_guard lock(mutex_);
  HyperUpdate merged = pending_.value_or(HyperUpdate{});
  if (update.learning_rate) merged.learning_rate = update.learning_rate;
  if (update.consistency_weight) merged.consistency_weight = update.consistency_weight;
  if (update.dropout_rate) merged.dropout_rate = update.dropout_rate;
  pending_ = merged;
}

void ControlChannel::request_stop() {
  std::lock_guard lock(mutex_);
  stop_ = true;
}

std::optional<HyperUpdate> ControlChannel::take() {
  std::lock_guard lock(mutex_);
  auto out = pending_;
  pending_.reset();
  return out;
}

bool ControlChannel::stop_requested() const {
  std::lock_guard lock(mutex_);
  return stop_;
}

Trainer::Trainer(const NetworkConfig& network, const TrainConfig& config, const TrainData& data,
                 const PipelineConfig& pipeline)
    : network_(network), config_(config), data_(data), seed_(config.seed) {
  config_.validate();
  network_.dropout_rate = config_.dropout_rate;
  init_pipeline(pipeline);
  student_ = model::build_network<float>(network_, derive_seed(seed_, {kTagInit}));
  teacher_ = student_;
  optimizer_ = nn::AdamState<float>::for_params(student_, config_.learning_rate);
}

Trainer::Trainer(const Checkpoint& checkpoint, const TrainConfig& config, const TrainData& data,
                 const PipelineConfig& pipeline, std::optional<std::uint64_t> reseed)
    : network_(checkpoint.config),
      config_(config),
      data_(data),
      student_(checkpoint.student),
      teacher_(checkpoint.teacher.value_or(checkpoint.student)),
      seed_(reseed.value_or(checkpoint.seed)),
      epoch_(checkpoint.epoch),
      global_step_(checkpoint.global_step) {
  config_.validate();
  network_.dropout_rate = config_.dropout_rate;
  init_pipeline(pipeline);
  if (checkpoint.optimizer) {
    optimizer_ = *checkpoint.optimizer;
    optimizer_.learning_rate = config_.learning_rate;
  } else {
    optimizer_ = nn::AdamState<float>::for_params(student_, config_.learning_rate);
  }
}

void Trainer::init_pipeline(const PipelineConfig& pipeline) {
  network_.validate();
  pipeline_.emplace(pipeline.features, pipeline.augment, data_.noise_bank);
  require(pipeline_->height() == network_.input_height && pipeline_->width() == network_.input_width,
          ErrorCode::kConfig,
          "network input " + std::to_string(network_.input_height) + "x" + std::to_string(network_.input_width) +
              " does not match features " + std::to_string(pipeline_->height()) + "x" +
              std::to_string(pipeline_->width()));
  require(!data_.labeled.empty(), ErrorCode::kConfig, "the labeled training pool is empty");
  for (Split s : {Split::kTrainLabeled, Split::kHoldout, Split::kValidation}) {
    auto& labels = labels_[split_index(s)];
    for (const auto& sample : data_.split(s)) labels.push_back(static_cast<int>(*sample.label));
  }
}

void Trainer::apply(const HyperUpdate& update) {
  if (update.learning_rate) config_.learning_rate = *update.learning_rate;
  if (update.consistency_weight) config_.consistency_weight = *update.consistency_weight;
  if (update.dropout_rate) config_.dropout_rate = *update.dropout_rate;
  config_.validate();
  optimizer_.learning_rate = config_.learning_rate;
  network_.dropout_rate = config_.dropout_rate;
}

std::size_t Trainer::steps_per_epoch() const {
  if (config_.steps_per_epoch > 0) return config_.steps_per_epoch;
  const std::size_t lab = config_.effective_labeled_per_batch();
  auto ceil_div = [](std::size_t a, std::size_t b) { return (a + b - 1) / b; };
  std::size_t steps = ceil_div(data_.labeled.size(), lab);
  const std::size_t unlab = config_.batch_size - lab;
  if (config_.mode == TrainMode::kMeanTeacher && unlab > 0 && !data_.unlabeled.empty()) {
    steps = std::max(steps, ceil_div(data_.unlabeled.size(), unlab));
  }
  return steps;
}

EpochMetrics Trainer::run_epoch(ControlChannel* channel) {
  const auto t0 = std::chrono::steady_clock::now();
  const bool mean_teacher = config_.mode == TrainMode::kMeanTeacher;
  BatchSource source(data_, *pipeline_,
                     {config_.batch_size, config_.effective_labeled_per_batch(), mean_teacher},
                     derive_seed(seed_, {kTagBatches}));
  const std::size_t steps = steps_per_epoch();
  double class_sum = 0.0, cons_sum = 0.0;
  std::size_t done = 0;
  for (std::size_t s = 0; s < steps; ++s) {
    if (channel) {
      if (channel->stop_requested()) break;
      if (auto update = channel->take()) apply(*update);
    }
    const auto batch = source.make(global_step_);
    StepOptions opt{config_.mode, config_.consistency_weight, config_.ema_decay, config_.kl_direction,
                    derive_seed(seed_, {kTagStep, global_step_})};
    StepResult r;
    try {
      r = train_step(student_, teacher_, network_, batch, opt, optimizer_);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kDiverged) throw;
      fail(ErrorCode::kDiverged, std::string(e.what()) + " at epoch " + std::to_string(epoch_ + 1) + ", step " +
                                     std::to_string(global_step_));
    }
    class_sum += r.class_loss;
    cons_sum += r.consistency_loss;
    ++global_step_;
    ++done;
  }
  ++epoch_;
  EpochMetrics m;
  m.epoch = epoch_;
  m.class_loss = done ? class_sum / static_cast<double>(done) : 0.0;
  m.consistency_loss = done ? cons_sum / static_cast<double>(done) : 0.0;
  if (!data_.holdout.empty()) m.holdout_accuracy = evaluate(Split::kHoldout).accuracy;
  if (!data_.validation.empty()) {
    m.validation_accuracy = evaluate(Split::kValidation).accuracy;
    if (config_.record_student) m.student_validation_accuracy = evaluate_params(student_, Split::kValidation).accuracy;
  }
  if (config_.log_wall_time) {
    m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
  return m;
}

const ParameterSet<float>& Trainer::model() const {
  return config_.mode == TrainMode::kMeanTeacher ? teacher_ : student_;
}

const nn::Tensor<float>& Trainer::features_for(Split split) const {
  auto& slot = feature_cache_[split_index(split)];
  if (!slot) slot = pipeline_->plain_batch(data_.split(split));
  return *slot;
}

EvalResult Trainer::evaluate(Split split) const { return evaluate_params(model(), split); }

EvalResult Trainer::evaluate_params(const ParameterSet<float>& params, Split split) const {
  require(split != Split::kTrainUnlabeled, ErrorCode::kInvalidArgument, "cannot evaluate the unlabeled pool");
  require(!data_.split(split).empty(), ErrorCode::kEmptyDataset,
          "evaluate: split " + std::string(split_name(split)) + " is empty");
  return trainer::evaluate(params, network_, features_for(split), labels_[split_index(split)]);
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint ck;
  ck.config = network_;
  ck.student = student_;
  ck.teacher = teacher_;
  ck.optimizer = optimizer_;
  ck.epoch = epoch_;
  ck.global_step = global_step_;
  ck.seed = seed_;
  ck.teacher_is_model = config_.mode == TrainMode::kMeanTeacher;
  return ck;
}

TrainResult train_loop(const NetworkConfig& network, const TrainConfig& config, const TrainData& data,
                       const PipelineConfig& pipeline, const LoopCallbacks& callbacks) {
  Trainer trainer(network, config, data, pipeline);
  TrainResult result;
  for (std::size_t e = 0; e < config.epochs; ++e) {
    if (callbacks.channel && callbacks.channel->stop_requested()) break;
    result.metrics.push_back(trainer.run_epoch(callbacks.channel));
    if (callbacks.on_epoch) callbacks.on_epoch(result.metrics.back(), trainer);
  }
  result.checkpoint = trainer.checkpoint();
  return result;
}

std::string metrics_csv(std::span<const EpochMetrics> metrics, bool include_student) {
  std::ostringstream out;
  out << "epoch,class_loss,cons_loss,holdout_acc,val_acc,seconds";
  if (include_student) out << ",student_val_acc";
  out << '\n';
  auto opt = [](const std::optional<double>& v) { return v ? fmt(*v) : std::string(); };
  for (const auto& m : metrics) {
    out << m.epoch << ',' << fmt(m.class_loss) << ',' << fmt(m.consistency_loss) << ',' << opt(m.holdout_accuracy)
        << ',' << opt(m.validation_accuracy) << ',' << fmt(m.seconds);
    if (include_student) out << ',' << opt(m.student_validation_accuracy);
    out << '\n';
  }
  return out.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorCode::kIo, "cannot write " + path.string());
  out << text;
  require(out.good(), ErrorCode::kIo, "short write to " + path.string());
}

#define KWSF_INSTANTIATE_TRAINER(T)                                                                               \
  template StepResult train_step(ParameterSet<T>&, ParameterSet<T>&, const NetworkConfig&, const Minibatch<T>&,    \
                                 const StepOptions&, nn::AdamState<T>&);                                           \
  template std::vector<int> predict(const ParameterSet<T>&, const NetworkConfig&, const nn::Tensor<T>&,            \
                                    std::size_t);                                                                  \
  template EvalResult evaluate(const ParameterSet<T>&, const NetworkConfig&, const nn::Tensor<T>&,                 \
                               std::span<const int>);

KWSF_INSTANTIATE_TRAINER(float)
KWSF_INSTANTIATE_TRAINER(double)

}  // namespace kwsf::trainer
