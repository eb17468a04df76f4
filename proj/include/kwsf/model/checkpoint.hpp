#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "kwsf/json_io.hpp"
#include "kwsf/model/network.hpp"
#include "kwsf/nn/optim.hpp"

namespace kwsf::model {

inline constexpr std::uint32_t kCheckpointVersion = 1;

Json network_config_to_json(const NetworkConfig& config);
NetworkConfig network_config_from_json(const Json& j);

// Checkpoints are always float32.
struct Checkpoint {
  NetworkConfig config;
  ParameterSet<float> student;
  std::optional<ParameterSet<float>> teacher;
  std::optional<nn::AdamState<float>> optimizer;
  std::uint64_t epoch = 0;
  std::uint64_t global_step = 0;  // position of the stateless batch samplers
  std::uint64_t seed = 0;         // base of every derived RNG stream
  // The teacher is "the model" in mean-teacher runs.
  bool teacher_is_model = false;

  const ParameterSet<float>& model() const;
  bool operator==(const Checkpoint& other) const;
};

std::vector<std::uint8_t> serialize(const Checkpoint& checkpoint);
// Throws kCorruptCheckpoint on bad magic/version, truncation, checksum
// mismatch or tensors that disagree with the stored config.
Checkpoint deserialize(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Exact byte length of serialize() for a checkpoint of this config.
std::size_t checkpoint_size_bytes(const NetworkConfig& config, bool include_teacher = false,
                                  bool include_optimizer = false);

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t size);

}  // namespace kwsf::model
