#include "kwsf/model/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>

namespace kwsf::model {

namespace {

constexpr char kMagic[4] = {'K', 'W', 'S', 'F'};
constexpr std::uint32_t kFlagTeacher = 1u;
constexpr std::uint32_t kFlagOptimizer = 2u;
constexpr std::uint32_t kFlagTeacherIsModel = 4u;
// epoch, global_step, seed, adam step (u64 each), learning rate (f64), flags (u32)
constexpr std::size_t kStateBytes = 5 * 8 + 4;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
  }
  void u32(std::uint32_t v) { bytes(&v, 4); }
  void u64(std::uint64_t v) { bytes(&v, 8); }
  void f64(double v) { bytes(&v, 8); }
  void tensor(const nn::Tensor<float>& t) { bytes(t.ptr(), 4 * t.size()); }
  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}
  void bytes(void* p, std::size_t n) {
    require(n <= size_ - pos_, ErrorCode::kCorruptCheckpoint, "checkpoint truncated");
    std::memcpy(p, data_ + pos_, n);
    pos_ += n;
  }
  std::uint32_t u32() {
    std::uint32_t v;
    bytes(&v, 4);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    bytes(&v, 8);
    return v;
  }
  double f64() {
    double v;
    bytes(&v, 8);
    return v;
  }
  void tensor(nn::Tensor<float>& t) { bytes(t.ptr(), 4 * t.size()); }
  std::size_t remaining() const { return size_ - pos_; }

 private:
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

std::string config_blob(const NetworkConfig& config) { return network_config_to_json(config).dump(); }

}  // namespace

Json network_config_to_json(const NetworkConfig& c) {
  Json j;
  j["n_blocks"] = c.n_blocks;
  j["channels"] = c.channels;
  j["kernel_h"] = c.kernel_h;
  j["kernel_w"] = c.kernel_w;
  j["fc_hidden"] = c.fc_hidden;
  j["n_classes"] = c.n_classes;
  j["dropout_rate"] = c.dropout_rate;
  j["input_height"] = c.input_height;
  j["input_width"] = c.input_width;
  j["residual"] = c.residual;
  j["bn_momentum"] = c.bn_momentum;
  j["bn_epsilon"] = c.bn_epsilon;
  return j;
}

NetworkConfig network_config_from_json(const Json& j) {
  NetworkConfig c;
  JsonReader r(j, "network");
  r.get("n_blocks", c.n_blocks)
      .get("channels", c.channels)
      .get("kernel_h", c.kernel_h)
      .get("kernel_w", c.kernel_w)
      .get("fc_hidden", c.fc_hidden)
      .get("n_classes", c.n_classes)
      .get("dropout_rate", c.dropout_rate)
      .get("input_height", c.input_height)
      .get("input_width", c.input_width)
      .get("residual", c.residual)
      .get("bn_momentum", c.bn_momentum)
      .get("bn_epsilon", c.bn_epsilon);
  r.finish();
  return c;
}

const ParameterSet<float>& Checkpoint::model() const {
  if (teacher_is_model) {
    require(teacher.has_value(), ErrorCode::kCorruptCheckpoint, "checkpoint names the teacher as model but has none");
    return *teacher;
  }
  return student;
}

bool Checkpoint::operator==(const Checkpoint& o) const {
  auto same_opt = [](const std::optional<nn::AdamState<float>>& a, const std::optional<nn::AdamState<float>>& b) {
    if (a.has_value() != b.has_value()) return false;
    if (!a) return true;
    return a->step == b->step && a->learning_rate == b->learning_rate && a->first_moment == b->first_moment &&
           a->second_moment == b->second_moment;
  };
  return config == o.config && student == o.student && teacher == o.teacher && same_opt(optimizer, o.optimizer) &&
         epoch == o.epoch && global_step == o.global_step && seed == o.seed && teacher_is_model == o.teacher_is_model;
}

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t size) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<std::uint8_t> serialize(const Checkpoint& ck) {
  ck.config.validate();
  const auto reference = build_network<float>(ck.config, 0);
  require(ck.student.same_schema(reference), ErrorCode::kShape, "serialize: student does not match its config");
  if (ck.teacher) require(ck.teacher->same_schema(reference), ErrorCode::kShape, "serialize: teacher schema mismatch");
  if (ck.optimizer) require(ck.optimizer->matches(ck.student), ErrorCode::kShape, "serialize: optimizer mismatch");

  Writer w;
  w.out.reserve(checkpoint_size_bytes(ck.config, ck.teacher.has_value(), ck.optimizer.has_value()));
  w.bytes(kMagic, 4);
  w.u32(kCheckpointVersion);
  const std::string blob = config_blob(ck.config);
  w.u32(static_cast<std::uint32_t>(blob.size()));
  w.bytes(blob.data(), blob.size());
  w.u64(ck.epoch);
  w.u64(ck.global_step);
  w.u64(ck.seed);
  w.u64(ck.optimizer ? ck.optimizer->step : 0);
  w.f64(ck.optimizer ? ck.optimizer->learning_rate : 0.0);
  std::uint32_t flags = 0;
  if (ck.teacher) flags |= kFlagTeacher;
  if (ck.optimizer) flags |= kFlagOptimizer;
  if (ck.teacher_is_model) flags |= kFlagTeacherIsModel;
  w.u32(flags);
  for (const auto& p : ck.student) w.tensor(p.tensor);
  if (ck.teacher) {
    for (const auto& p : *ck.teacher) w.tensor(p.tensor);
  }
  if (ck.optimizer) {
    for (std::size_t i = 0; i < ck.student.size(); ++i) {
      if (!ck.student[i].trainable) continue;
      w.tensor(ck.optimizer->first_moment[i]);
      w.tensor(ck.optimizer->second_moment[i]);
    }
  }
  w.u64(fnv1a64(w.out.data(), w.out.size()));
  return std::move(w.out);
}

Checkpoint deserialize(const std::vector<std::uint8_t>& bytes) {
  require(bytes.size() >= 8 + 4 + 8, ErrorCode::kCorruptCheckpoint, "checkpoint truncated");
  require(std::memcmp(bytes.data(), kMagic, 4) == 0, ErrorCode::kCorruptCheckpoint, "bad checkpoint magic");
  const std::size_t body = bytes.size() - 8;
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + body, 8);
  Reader r(bytes.data() + 4, body - 4);
  const std::uint32_t version = r.u32();
  require(version == kCheckpointVersion, ErrorCode::kCorruptCheckpoint,
          "unsupported checkpoint version " + std::to_string(version));
  require(stored == fnv1a64(bytes.data(), body), ErrorCode::kCorruptCheckpoint, "checkpoint checksum mismatch");

  Checkpoint ck;
  std::string blob(r.u32(), '\0');
  r.bytes(blob.data(), blob.size());
  try {
    ck.config = network_config_from_json(Json::parse(blob));
    ck.config.validate();
  } catch (const std::exception& e) {
    fail(ErrorCode::kCorruptCheckpoint, std::string("checkpoint config unreadable: ") + e.what());
  }
  ck.epoch = r.u64();
  ck.global_step = r.u64();
  ck.seed = r.u64();
  const std::uint64_t adam_step = r.u64();
  const double lr = r.f64();
  const std::uint32_t flags = r.u32();
  require((flags & ~7u) == 0, ErrorCode::kCorruptCheckpoint, "unknown checkpoint flags");
  ck.teacher_is_model = (flags & kFlagTeacherIsModel) != 0;

  const std::size_t expected =
      checkpoint_size_bytes(ck.config, (flags & kFlagTeacher) != 0, (flags & kFlagOptimizer) != 0);
  require(bytes.size() == expected, ErrorCode::kCorruptCheckpoint,
          "checkpoint is " + std::to_string(bytes.size()) + " bytes, config implies " + std::to_string(expected));

  ck.student = build_network<float>(ck.config, 0);
  for (auto& p : ck.student) r.tensor(p.tensor);
  if (flags & kFlagTeacher) {
    ck.teacher = build_network<float>(ck.config, 0);
    for (auto& p : *ck.teacher) r.tensor(p.tensor);
  }
  if (flags & kFlagOptimizer) {
    auto state = nn::AdamState<float>::for_params(ck.student, lr);
    state.step = adam_step;
    for (std::size_t i = 0; i < ck.student.size(); ++i) {
      if (!ck.student[i].trainable) continue;
      r.tensor(state.first_moment[i]);
      r.tensor(state.second_moment[i]);
    }
    ck.optimizer = std::move(state);
  }
  require(r.remaining() == 0, ErrorCode::kCorruptCheckpoint, "trailing bytes in checkpoint");
  if (ck.teacher_is_model) require(ck.teacher.has_value(), ErrorCode::kCorruptCheckpoint, "model teacher missing");
  return ck;
}

std::size_t checkpoint_size_bytes(const NetworkConfig& config, bool include_teacher, bool include_optimizer) {
  config.validate();
  const std::size_t header = 4 + 4 + 4 + config_blob(config).size() + kStateBytes;
  std::size_t floats = param_count(config);
  if (include_teacher) floats += param_count(config);
  if (include_optimizer) floats += 2 * trainable_param_count(config);
  return header + 4 * floats + 8;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path) {
  const auto bytes = serialize(checkpoint);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(out.good(), ErrorCode::kIo, "cannot write checkpoint " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    require(out.good(), ErrorCode::kIo, "short write to " + tmp);
  }
  require(std::rename(tmp.c_str(), path.c_str()) == 0, ErrorCode::kIo, "cannot move " + tmp + " to " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCode::kIo, "cannot open checkpoint " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

}  // namespace kwsf::model
