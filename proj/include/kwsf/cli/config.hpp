#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "kwsf/augment.hpp"
#include "kwsf/features.hpp"
#include "kwsf/fixture.hpp"
#include "kwsf/json_io.hpp"
#include "kwsf/manifest.hpp"
#include "kwsf/model/network.hpp"
#include "kwsf/pbt/pbt.hpp"
#include "kwsf/trainer/trainer.hpp"

namespace kwsf::cli {

struct DataConfig {
  std::filesystem::path root;
  // Read instead of rebuilding from root when set.
  std::optional<std::filesystem::path> manifest;
  ManifestConfig split;  // seed comes from the run seed
};

struct EvalConfig {
  std::filesystem::path checkpoint;
  Split split = Split::kValidation;
};

// Everything a run needs. One top-level seed feeds every RNG stream.
struct RunConfig {
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  DataConfig data;
  dsp::FeatureConfig features;
  augment::AugmentPolicy augment;
  std::string network_preset = "edge";
  model::NetworkConfig network = model::edge_config();
  trainer::TrainConfig train;
  pbt::PbtConfig pbt;
  FixtureConfig fixture;
  EvalConfig eval;

  // Pushes the seed into every section and the feature shape into the
  // network, then validates.
  void resolve();
};

// Missing keys keep their defaults; unknown keys are rejected.
RunConfig run_config_from_json(const Json& j);
Json run_config_to_json(const RunConfig& c);
RunConfig load_run_config(const std::filesystem::path& path);

Json feature_config_to_json(const dsp::FeatureConfig& c);
dsp::FeatureConfig feature_config_from_json(const Json& j);
Json augment_policy_to_json(const augment::AugmentPolicy& p);
augment::AugmentPolicy augment_policy_from_json(const Json& j);

}  // namespace kwsf::cli
