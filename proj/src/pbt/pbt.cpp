#include "kwsf/pbt/pbt.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>
#include <thread>

#include "kwsf/random.hpp"

namespace kwsf::pbt {

namespace {

constexpr std::uint64_t kTagPopulation = 0x909;
constexpr std::uint64_t kTagMember = 0x3e3b;
constexpr std::uint64_t kTagTrain = 0x7a1;
constexpr std::uint64_t kTagExploit = 0xe8910;
constexpr std::uint64_t kTagExplore = 0xe8910e;

double draw(Rng& rng, const Range& r) {
  if (r.log_scale) return std::exp(rng.uniform(std::log(r.lo), std::log(r.hi)));
  return rng.uniform(r.lo, r.hi);
}

Json range_to_json(const Range& r) { return Json::array({r.lo, r.hi}); }

Range range_from_json(const Json& j, bool log_scale, const char* name) {
  require(j.is_array() && j.size() == 2 && j[0].is_number() && j[1].is_number(), ErrorCode::kConfig,
          std::string("pbt.ranges.") + name + " must be [lo, hi]");
  return {j[0].get<double>(), j[1].get<double>(), log_scale};
}

// Runs f(i) for i in [0, n) on up to `workers` threads. The first failure
// (lowest index) is rethrown after every task has finished.
template <typename F>
void parallel_for(std::size_t n, std::size_t workers, F&& f) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        f(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> threads;
    for (std::size_t w = 0; w < workers; ++w) threads.emplace_back(work);
    for (auto& t : threads) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

Json hyper_params_to_json(const HyperParams& hp) {
  Json j;
  j["dropout_rate"] = hp.dropout_rate;
  j["consistency_weight"] = hp.consistency_weight;
  j["learning_rate"] = hp.learning_rate;
  return j;
}

HyperParams hyper_params_from_json(const Json& j) {
  HyperParams hp;
  JsonReader r(j, "hyper_params");
  r.get("dropout_rate", hp.dropout_rate)
      .get("consistency_weight", hp.consistency_weight)
      .get("learning_rate", hp.learning_rate);
  r.finish();
  return hp;
}

void HyperRanges::validate() const {
  for (const Range* r : {&dropout_rate, &consistency_weight, &learning_rate}) {
    require(r->lo <= r->hi, ErrorCode::kConfig, "hyper-parameter range has lo > hi");
    if (r->log_scale) require(r->lo > 0.0, ErrorCode::kConfig, "log-scale ranges must be positive");
  }
  require(dropout_rate.lo >= 0.0 && dropout_rate.hi < 1.0, ErrorCode::kConfig, "dropout range must lie in [0, 1)");
}

HyperParams HyperRanges::clamp(const HyperParams& hp) const {
  return {dropout_rate.clamp(hp.dropout_rate), consistency_weight.clamp(hp.consistency_weight),
          learning_rate.clamp(hp.learning_rate)};
}

bool HyperRanges::contains(const HyperParams& hp) const {
  return dropout_rate.contains(hp.dropout_rate) && consistency_weight.contains(hp.consistency_weight) &&
         learning_rate.contains(hp.learning_rate);
}

std::vector<PopulationMember> init_population(std::size_t n, const HyperRanges& ranges, std::uint64_t seed) {
  require(n >= 2, ErrorCode::kConfig, "a population needs at least 2 members");
  ranges.validate();
  Rng rng(derive_seed(seed, {kTagPopulation}));
  std::vector<PopulationMember> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& m = out[i];
    m.member_id = i;
    m.hyper.learning_rate = draw(rng, ranges.learning_rate);
    m.hyper.consistency_weight = draw(rng, ranges.consistency_weight);
    m.hyper.dropout_rate = draw(rng, ranges.dropout_rate);
    m.init_seed = derive_seed(seed, {kTagMember, i});
  }
  return out;
}

std::vector<std::size_t> select_elites(std::span<const double> scores, double elite_fraction) {
  require(!scores.empty(), ErrorCode::kInvalidArgument, "select_elites: no scores");
  require(elite_fraction > 0.0 && elite_fraction <= 1.0, ErrorCode::kConfig, "elite_fraction must lie in (0, 1]");
  const std::size_t n = scores.size();
  // The epsilon keeps 0.1 * 50 from rounding up to 6.
  auto k = static_cast<std::size_t>(std::ceil(elite_fraction * static_cast<double>(n) - 1e-9));
  k = std::clamp<std::size_t>(k, 1, n);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) { return scores[a] > scores[b] || (scores[a] == scores[b] && a < b); });
  idx.resize(k);
  return idx;
}

std::vector<Assignment> exploit(const std::vector<PopulationMember>& population, double elite_fraction,
                                std::uint64_t seed) {
  std::vector<double> scores;
  for (std::size_t i = 0; i < population.size(); ++i) {
    require(population[i].member_id == i, ErrorCode::kInvalidArgument, "exploit: member ids must be 0..n-1");
    require(population[i].holdout_score.has_value(), ErrorCode::kInvalidArgument,
            "exploit: member " + std::to_string(i) + " has no score");
    scores.push_back(*population[i].holdout_score);
  }
  const auto elites = select_elites(scores, elite_fraction);
  Rng rng(seed);
  std::vector<Assignment> out;
  for (std::size_t i = 0; i < population.size(); ++i) out.push_back({i, elites[rng.index(elites.size())]});
  return out;
}

HyperParams explore(const HyperParams& hp, const ExploreConfig& config, const HyperRanges& ranges,
                    std::uint64_t seed) {
  Rng rng(seed);
  HyperParams out = hp;
  out.learning_rate *= config.scale_factors[rng.index(2)];
  out.consistency_weight *= config.scale_factors[rng.index(2)];
  out.dropout_rate += config.dropout_shifts[rng.index(2)];
  return ranges.clamp(out);
}

// --- stores ---

void MemoryStore::put(const std::string& name, std::vector<std::uint8_t> bytes) {
  std::lock_guard lock(mutex_);
  blobs_[name] = std::move(bytes);
}

std::vector<std::uint8_t> MemoryStore::get(const std::string& name) const {
  std::lock_guard lock(mutex_);
  auto it = blobs_.find(name);
  require(it != blobs_.end(), ErrorCode::kIo, "no checkpoint named " + name);
  return it->second;
}

void MemoryStore::release(const std::string& name) {
  std::lock_guard lock(mutex_);
  blobs_.erase(name);
}

std::size_t MemoryStore::size() const {
  std::lock_guard lock(mutex_);
  return blobs_.size();
}

DirectoryStore::DirectoryStore(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::filesystem::create_directories(dir_);
}

void DirectoryStore::put(const std::string& name, std::vector<std::uint8_t> bytes) {
  const auto path = dir_ / name;
  const auto tmp = dir_ / (name + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(out.good(), ErrorCode::kIo, "cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    require(out.good(), ErrorCode::kIo, "short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::vector<std::uint8_t> DirectoryStore::get(const std::string& name) const {
  std::ifstream in(dir_ / name, std::ios::binary);
  require(in.good(), ErrorCode::kIo, "cannot read checkpoint " + (dir_ / name).string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string checkpoint_name(std::size_t generation, std::size_t member_id) {
  return "gen" + std::to_string(generation) + "_member" + std::to_string(member_id) + ".ckpt";
}

// --- backends ---

double surrogate_objective(const HyperParams& hp) {
  const double a = std::log10(hp.learning_rate / 1e-3);
  const double b = (hp.dropout_rate - 0.2) / 0.3;
  return 1.0 - 0.5 * a * a - 0.5 * b * b;
}

namespace {

std::vector<std::uint8_t> surrogate_blob(const HyperParams& hp) {
  const std::string s = hyper_params_to_json(hp).dump();
  return {s.begin(), s.end()};
}

}  // namespace

MemberOutcome SurrogateBackend::train(const PopulationMember& member, const std::vector<std::uint8_t>*,
                                      std::uint64_t) {
  MemberOutcome out;
  out.checkpoint = surrogate_blob(member.hyper);
  if (std::find(diverging_members.begin(), diverging_members.end(), member.member_id) != diverging_members.end()) {
    out.diverged = true;
    out.message = "surrogate divergence";
    return out;
  }
  out.score = surrogate_objective(member.hyper);
  return out;
}

double SurrogateBackend::evaluate(const std::vector<std::uint8_t>& checkpoint) {
  return surrogate_objective(hyper_params_from_json(Json::parse(checkpoint.begin(), checkpoint.end())));
}

MemberOutcome SurrogateBackend::initial(const PopulationMember& member) { return train(member, nullptr, 0); }

TrainerBackend::TrainerBackend(model::NetworkConfig network, trainer::TrainConfig base,
                               const trainer::TrainData& data, trainer::PipelineConfig pipeline,
                               std::size_t epochs_per_generation)
    : network_(std::move(network)),
      base_(std::move(base)),
      data_(data),
      pipeline_(std::move(pipeline)),
      epochs_(epochs_per_generation) {
  require(!data_.holdout.empty(), ErrorCode::kConfig, "PBT scores members on the holdout split, which is empty");
}

trainer::TrainConfig TrainerBackend::config_for(const PopulationMember& member) const {
  trainer::TrainConfig c = base_;
  c.learning_rate = member.hyper.learning_rate;
  c.consistency_weight = member.hyper.consistency_weight;
  c.dropout_rate = member.hyper.dropout_rate;
  c.seed = member.init_seed;
  return c;
}

MemberOutcome TrainerBackend::train(const PopulationMember& member, const std::vector<std::uint8_t>* start,
                                    std::uint64_t run_seed) {
  const auto cfg = config_for(member);
  const model::Checkpoint ck =
      start ? model::deserialize(*start) : trainer::Trainer(network_, cfg, data_, pipeline_).checkpoint();
  trainer::Trainer t(ck, cfg, data_, pipeline_, run_seed);
  MemberOutcome out;
  try {
    for (std::size_t e = 0; e < epochs_; ++e) t.run_epoch();
  } catch (const Error& err) {
    if (err.code() != ErrorCode::kDiverged) throw;
    out.diverged = true;
    out.message = err.what();
    out.checkpoint = start ? *start : model::serialize(ck);
    return out;
  }
  out.score = t.evaluate(Split::kHoldout).accuracy;
  out.checkpoint = model::serialize(t.checkpoint());
  return out;
}

double TrainerBackend::evaluate(const std::vector<std::uint8_t>& checkpoint) {
  const auto ck = model::deserialize(checkpoint);
  trainer::TrainConfig cfg = base_;
  cfg.dropout_rate = ck.config.dropout_rate;
  trainer::Trainer t(ck, cfg, data_, pipeline_);
  return t.evaluate_params(ck.model(), Split::kHoldout).accuracy;
}

MemberOutcome TrainerBackend::initial(const PopulationMember& member) {
  trainer::Trainer t(network_, config_for(member), data_, pipeline_);
  MemberOutcome out;
  out.score = t.evaluate(Split::kHoldout).accuracy;
  out.checkpoint = model::serialize(t.checkpoint());
  return out;
}

// --- scheduler ---

void PbtConfig::validate() const {
  require(population >= 2, ErrorCode::kConfig, "pbt.population must be >= 2");
  require(elite_fraction > 0.0 && elite_fraction <= 1.0, ErrorCode::kConfig, "pbt.elite_fraction must lie in (0, 1]");
  require(epochs_per_generation >= 1, ErrorCode::kConfig, "pbt.epochs_per_generation must be >= 1");
  ranges.validate();
}

Json pbt_config_to_json(const PbtConfig& c) {
  Json j;
  j["population"] = c.population;
  j["generations"] = c.generations;
  j["epochs_per_generation"] = c.epochs_per_generation;
  j["elite_fraction"] = c.elite_fraction;
  j["ranges"] = {{"dropout_rate", range_to_json(c.ranges.dropout_rate)},
                 {"consistency_weight", range_to_json(c.ranges.consistency_weight)},
                 {"learning_rate", range_to_json(c.ranges.learning_rate)}};
  j["explore"] = {{"scale_factors", c.explore.scale_factors}, {"dropout_shifts", c.explore.dropout_shifts}};
  j["keep_elite_copies"] = c.keep_elite_copies;
  j["surrogate"] = c.surrogate;
  j["seed"] = c.seed;
  return j;
}

PbtConfig pbt_config_from_json(const Json& j) {
  PbtConfig c;
  JsonReader r(j, "pbt");
  r.get("population", c.population)
      .get("generations", c.generations)
      .get("epochs_per_generation", c.epochs_per_generation)
      .get("elite_fraction", c.elite_fraction)
      .get("keep_elite_copies", c.keep_elite_copies)
      .get("surrogate", c.surrogate)
      .get("seed", c.seed);
  if (r.has("ranges")) {
    const Json& rj = r.at("ranges");
    JsonReader rr(rj, "pbt.ranges");
    if (rr.has("dropout_rate")) c.ranges.dropout_rate = range_from_json(rj.at("dropout_rate"), false, "dropout_rate");
    if (rr.has("consistency_weight")) {
      c.ranges.consistency_weight = range_from_json(rj.at("consistency_weight"), true, "consistency_weight");
    }
    if (rr.has("learning_rate")) {
      c.ranges.learning_rate = range_from_json(rj.at("learning_rate"), true, "learning_rate");
    }
    rr.finish();
  }
  if (r.has("explore")) {
    JsonReader er(r.at("explore"), "pbt.explore");
    er.get("scale_factors", c.explore.scale_factors).get("dropout_shifts", c.explore.dropout_shifts);
    er.finish();
  }
  r.finish();
  c.validate();
  return c;
}

Json trajectory_event_to_json(const TrajectoryEvent& e) {
  Json j;
  j["generation"] = e.generation;
  j["member_id"] = e.member_id;
  j["parent_id"] = e.parent_id ? Json(*e.parent_id) : Json(nullptr);
  j["hp_before"] = hyper_params_to_json(e.hp_before);
  j["hp_after"] = hyper_params_to_json(e.hp_after);
  j["explore_seed"] = e.explore_seed;
  j["perturbed"] = e.perturbed;
  j["holdout_score"] = e.holdout_score;
  j["diverged"] = e.diverged;
  return j;
}

TrajectoryEvent trajectory_event_from_json(const Json& j) {
  TrajectoryEvent e;
  JsonReader r(j, "trajectory");
  r.get("generation", e.generation)
      .get("member_id", e.member_id)
      .get("explore_seed", e.explore_seed)
      .get("perturbed", e.perturbed)
      .get("holdout_score", e.holdout_score)
      .get("diverged", e.diverged);
  if (r.has("parent_id") && !j.at("parent_id").is_null()) e.parent_id = j.at("parent_id").get<std::size_t>();
  if (r.has("hp_before")) e.hp_before = hyper_params_from_json(j.at("hp_before"));
  if (r.has("hp_after")) e.hp_after = hyper_params_from_json(j.at("hp_after"));
  r.finish();
  return e;
}

void run_generation(std::vector<PopulationMember>& population, MemberBackend& backend, CheckpointStore& store,
                    std::size_t worker_limit, std::uint64_t seed) {
  parallel_for(population.size(), worker_limit, [&](std::size_t i) {
    auto& m = population[i];
    std::optional<std::vector<std::uint8_t>> start;
    if (!m.start_ref.empty()) start = store.get(m.start_ref);
    auto outcome = backend.train(m, start ? &*start : nullptr, derive_seed(seed, {kTagTrain, m.generation, m.member_id}));
    m.end_ref = checkpoint_name(m.generation, m.member_id);
    store.put(m.end_ref, std::move(outcome.checkpoint));
    m.diverged = outcome.diverged;
    m.holdout_score = outcome.diverged ? 0.0 : outcome.score;
  });
}

PbtResult run_pbt(const PbtConfig& config, MemberBackend& backend, CheckpointStore& store, std::size_t worker_limit,
                  const GenerationCallback& on_generation) {
  config.validate();
  PbtResult result;
  auto population = init_population(config.population, config.ranges, config.seed);
  const std::size_t n = population.size();
  // Per-member record of how the current generation was spawned.
  std::vector<HyperParams> before(n);
  std::vector<std::uint64_t> explore_seeds(n, 0);
  std::vector<bool> perturbed(n, false);
  for (std::size_t i = 0; i < n; ++i) before[i] = population[i].hyper;

  bool have_best = false;
  auto record = [&](std::size_t g) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto& m = population[i];
      result.trajectory.push_back({g, m.member_id, m.parent_id, before[i], m.hyper, explore_seeds[i], perturbed[i],
                                   *m.holdout_score, m.diverged});
      if (!have_best || *m.holdout_score > result.best_score) {
        have_best = true;
        result.best_score = *m.holdout_score;
        result.best_generation = g;
        result.best_member = m.member_id;
        result.best_hyper = m.hyper;
        result.best_checkpoint = store.get(m.end_ref);
      }
    }
    result.best_so_far.push_back(result.best_score);
    if (on_generation) on_generation(g, population);
  };

  if (config.generations == 0) {
    parallel_for(n, worker_limit, [&](std::size_t i) {
      auto& m = population[i];
      auto outcome = backend.initial(m);
      m.end_ref = checkpoint_name(0, m.member_id);
      store.put(m.end_ref, std::move(outcome.checkpoint));
      m.diverged = outcome.diverged;
      m.holdout_score = outcome.diverged ? 0.0 : outcome.score;
    });
    record(0);
  }

  for (std::size_t g = 0; g < config.generations; ++g) {
    for (auto& m : population) m.generation = g;
    run_generation(population, backend, store, worker_limit, config.seed);
    for (const auto& m : population) {
      if (!m.start_ref.empty()) store.release(m.start_ref);
    }
    record(g);
    if (g + 1 == config.generations) break;

    const auto assignments = exploit(population, config.elite_fraction, derive_seed(config.seed, {kTagExploit, g}));
    std::vector<std::size_t> elites;
    if (config.keep_elite_copies) {
      std::vector<double> scores;
      for (const auto& m : population) scores.push_back(*m.holdout_score);
      elites = select_elites(scores, config.elite_fraction);
    }
    std::vector<PopulationMember> next(n);
    std::vector<bool> used(n, false);
    for (std::size_t i = 0; i < n; ++i) {
      const bool copy = i < elites.size();
      const std::size_t parent_id = copy ? elites[i] : assignments[i].parent_id;
      const auto& parent = population[parent_id];
      used[parent_id] = true;
      auto& m = next[i];
      m.member_id = i;
      m.generation = g + 1;
      m.start_ref = parent.end_ref;
      m.init_seed = parent.init_seed;
      m.parent_id = parent_id;
      before[i] = parent.hyper;
      perturbed[i] = !copy;
      explore_seeds[i] = copy ? 0 : derive_seed(config.seed, {kTagExplore, g + 1, i});
      m.hyper = copy ? parent.hyper : explore(parent.hyper, config.explore, config.ranges, explore_seeds[i]);
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (!used[i]) store.release(population[i].end_ref);
    }
    population = std::move(next);
  }
  result.final_population = population;
  return result;
}

std::string trajectory_jsonl(std::span<const TrajectoryEvent> log) {
  std::vector<TrajectoryEvent> sorted(log.begin(), log.end());
  std::stable_sort(sorted.begin(), sorted.end(), [](const TrajectoryEvent& a, const TrajectoryEvent& b) {
    return a.generation != b.generation ? a.generation < b.generation : a.member_id < b.member_id;
  });
  std::string out;
  for (const auto& e : sorted) out += trajectory_event_to_json(e).dump() + "\n";
  return out;
}

void export_trajectory(std::span<const TrajectoryEvent> log, const std::filesystem::path& path) {
  require(!log.empty(), ErrorCode::kInvalidArgument, "export_trajectory: empty log");
  trainer::write_text_file(path, trajectory_jsonl(log));
}

std::vector<TrajectoryEvent> parse_trajectory(std::string_view jsonl) {
  std::vector<TrajectoryEvent> out;
  std::istringstream in{std::string(jsonl)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(trajectory_event_from_json(Json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::kFormat, "trajectory line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::string population_csv(const std::vector<PopulationMember>& population) {
  std::ostringstream out;
  out << "member_id,score\n";
  char buf[32];
  for (const auto& m : population) {
    std::snprintf(buf, sizeof buf, "%.9g", m.holdout_score.value_or(0.0));
    out << m.member_id << ',' << buf << '\n';
  }
  return out.str();
}

}  // namespace kwsf::pbt
