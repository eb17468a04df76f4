#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kwsf/json_io.hpp"
#include "kwsf/trainer/trainer.hpp"

namespace kwsf::pbt {

struct HyperParams {
  double dropout_rate = 0.1;
  double consistency_weight = 1.0;
  double learning_rate = 1e-3;
  bool operator==(const HyperParams&) const = default;
};

Json hyper_params_to_json(const HyperParams& hp);
HyperParams hyper_params_from_json(const Json& j);

struct Range {
  double lo = 0.0;
  double hi = 1.0;
  bool log_scale = false;

  double clamp(double v) const { return v < lo ? lo : (v > hi ? hi : v); }
  bool contains(double v) const { return v >= lo && v <= hi; }
};

struct HyperRanges {
  Range dropout_rate{0.0, 0.5, false};
  Range consistency_weight{0.1, 10.0, true};
  Range learning_rate{1e-4, 1e-2, true};

  void validate() const;
  HyperParams clamp(const HyperParams& hp) const;
  bool contains(const HyperParams& hp) const;
};

struct ExploreConfig {
  std::array<double, 2> scale_factors{0.8, 1.25};     // learning rate and consistency weight
  std::array<double, 2> dropout_shifts{-0.05, 0.05};  // additive
};

struct PopulationMember {
  std::size_t member_id = 0;
  std::size_t generation = 0;
  HyperParams hyper;
  // Checkpoint the member starts its generation from; empty means a fresh
  // network built from init_seed.
  std::string start_ref;
  std::string end_ref;  // written by run_generation
  std::uint64_t init_seed = 0;
  std::optional<double> holdout_score;
  std::optional<std::size_t> parent_id;
  bool diverged = false;
};

// Log-uniform learning rate and consistency weight, uniform dropout.
std::vector<PopulationMember> init_population(std::size_t n, const HyperRanges& ranges, std::uint64_t seed);

// Indices of the top ceil(fraction * n) scores, best first; ties go to the
// lower index.
std::vector<std::size_t> select_elites(std::span<const double> scores, double elite_fraction);

struct Assignment {
  std::size_t member_id = 0;
  std::size_t parent_id = 0;
};

// One parent per new member, drawn uniformly from the elites.
std::vector<Assignment> exploit(const std::vector<PopulationMember>& population, double elite_fraction,
                                std::uint64_t seed);

// Multiplies learning rate and consistency weight by a factor drawn from
// scale_factors, shifts dropout by one of dropout_shifts, then clamps.
HyperParams explore(const HyperParams& hp, const ExploreConfig& config, const HyperRanges& ranges,
                    std::uint64_t seed);

// --- checkpoint storage ---

class CheckpointStore {
 public:
  virtual ~CheckpointStore() = default;
  virtual void put(const std::string& name, std::vector<std::uint8_t> bytes) = 0;
  virtual std::vector<std::uint8_t> get(const std::string& name) const = 0;
  // A hint that `name` is no longer referenced; stores may drop it.
  virtual void release(const std::string& name) { (void)name; }
};

class MemoryStore : public CheckpointStore {
 public:
  void put(const std::string& name, std::vector<std::uint8_t> bytes) override;
  std::vector<std::uint8_t> get(const std::string& name) const override;
  void release(const std::string& name) override;
  std::size_t size() const;

 private:
  mutable std::mutex mutex_;
  std::map<std::string, std::vector<std::uint8_t>> blobs_;
};

// Files `<dir>/<name>`; everything is kept.
class DirectoryStore : public CheckpointStore {
 public:
  explicit DirectoryStore(std::filesystem::path dir);
  void put(const std::string& name, std::vector<std::uint8_t> bytes) override;
  std::vector<std::uint8_t> get(const std::string& name) const override;
  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
};

std::string checkpoint_name(std::size_t generation, std::size_t member_id);

// --- member training backends ---

struct MemberOutcome {
  double score = 0.0;
  bool diverged = false;
  std::vector<std::uint8_t> checkpoint;
  std::string message;
};

class MemberBackend {
 public:
  virtual ~MemberBackend() = default;
  // Trains one generation from `start` (null: fresh init from init_seed).
  // Called concurrently for different members.
  virtual MemberOutcome train(const PopulationMember& member, const std::vector<std::uint8_t>* start,
                              std::uint64_t run_seed) = 0;
  // Scores a stored checkpoint without training it.
  virtual double evaluate(const std::vector<std::uint8_t>& checkpoint) = 0;
  // Scores an untrained member (used when there are no generations).
  virtual MemberOutcome initial(const PopulationMember& member) = 0;
};

// Analytic stand-in for training:
// f = 1 - 0.5 * (log10(lr / 1e-3))^2 - 0.5 * ((dropout - 0.2) / 0.3)^2,
// which spans [0, 1] over the default ranges. The "checkpoint" records the
// hyper-parameters it was produced under.
double surrogate_objective(const HyperParams& hp);

class SurrogateBackend : public MemberBackend {
 public:
  MemberOutcome train(const PopulationMember& member, const std::vector<std::uint8_t>* start,
                      std::uint64_t run_seed) override;
  double evaluate(const std::vector<std::uint8_t>& checkpoint) override;
  MemberOutcome initial(const PopulationMember& member) override;
  // Members whose id is listed here report a divergence (containment tests).
  std::vector<std::size_t> diverging_members;
};

// Real training: epochs_per_generation epochs per generation, scored by
// holdout accuracy of the evaluated model.
class TrainerBackend : public MemberBackend {
 public:
  TrainerBackend(model::NetworkConfig network, trainer::TrainConfig base, const trainer::TrainData& data,
                 trainer::PipelineConfig pipeline, std::size_t epochs_per_generation);
  MemberOutcome train(const PopulationMember& member, const std::vector<std::uint8_t>* start,
                      std::uint64_t run_seed) override;
  double evaluate(const std::vector<std::uint8_t>& checkpoint) override;
  MemberOutcome initial(const PopulationMember& member) override;

 private:
  trainer::TrainConfig config_for(const PopulationMember& member) const;

  model::NetworkConfig network_;
  trainer::TrainConfig base_;
  const trainer::TrainData& data_;
  trainer::PipelineConfig pipeline_;
  std::size_t epochs_;
};

// --- the scheduler ---

struct PbtConfig {
  std::size_t population = 20;
  std::size_t generations = 20;
  std::size_t epochs_per_generation = 2;
  double elite_fraction = 0.1;
  HyperRanges ranges;
  ExploreConfig explore;
  // Keep one unperturbed continuation per elite (the rest are perturbed).
  bool keep_elite_copies = false;
  // Score members with surrogate_objective instead of training them.
  bool surrogate = false;
  std::uint64_t seed = 0;

  void validate() const;
};

Json pbt_config_to_json(const PbtConfig& config);
PbtConfig pbt_config_from_json(const Json& j);

struct TrajectoryEvent {
  std::size_t generation = 0;
  std::size_t member_id = 0;
  std::optional<std::size_t> parent_id;
  HyperParams hp_before;
  HyperParams hp_after;
  std::uint64_t explore_seed = 0;
  bool perturbed = false;
  double holdout_score = 0.0;
  bool diverged = false;
};

Json trajectory_event_to_json(const TrajectoryEvent& e);
TrajectoryEvent trajectory_event_from_json(const Json& j);

// Trains every member for one generation on at most worker_limit threads and
// records scores and end checkpoints. Results do not depend on scheduling.
void run_generation(std::vector<PopulationMember>& population, MemberBackend& backend, CheckpointStore& store,
                    std::size_t worker_limit, std::uint64_t seed);

struct PbtResult {
  std::vector<TrajectoryEvent> trajectory;
  std::vector<PopulationMember> final_population;
  std::vector<double> best_so_far;  // best-ever score after each generation
  double best_score = 0.0;
  std::size_t best_generation = 0;
  std::size_t best_member = 0;
  HyperParams best_hyper;
  std::vector<std::uint8_t> best_checkpoint;
};

using GenerationCallback = std::function<void(std::size_t generation, const std::vector<PopulationMember>&)>;

// generations = 0 scores the untrained initial population; otherwise each
// generation trains and scores, followed by exploit and explore before the
// next. The best checkpoint is the best ever seen, not just the last.
PbtResult run_pbt(const PbtConfig& config, MemberBackend& backend, CheckpointStore& store, std::size_t worker_limit,
                  const GenerationCallback& on_generation = {});

// JSON Lines ordered by (generation, member_id).
std::string trajectory_jsonl(std::span<const TrajectoryEvent> log);
void export_trajectory(std::span<const TrajectoryEvent> log, const std::filesystem::path& path);
std::vector<TrajectoryEvent> parse_trajectory(std::string_view jsonl);

// member_id,score
std::string population_csv(const std::vector<PopulationMember>& population);

}  // namespace kwsf::pbt
