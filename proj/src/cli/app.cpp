#include "kwsf/cli/app.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "kwsf/cli/config.hpp"
#include "kwsf/model/checkpoint.hpp"

namespace kwsf::cli {

namespace fs = std::filesystem;

namespace {

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  // Subcommand extras.
  std::string root;
  std::optional<std::size_t> n_per_class;
  std::string checkpoint;
  std::string split;
  std::string input;
};

// Output goes to `<out>.partial` and is renamed into place on success, so a
// finished directory is never half-written.
class OutputDir {
 public:
  explicit OutputDir(fs::path target) : target_(std::move(target)) {
    require(!target_.empty(), ErrorCode::kConfig, "--out is required");
    if (fs::exists(target_)) {
      require(fs::is_directory(target_) && fs::is_empty(target_), ErrorCode::kConfig,
              "output directory " + target_.string() + " already exists and is not empty");
    }
    staging_ = target_;
    staging_ += ".partial";
    fs::remove_all(staging_);
    fs::create_directories(staging_);
  }

  fs::path operator/(const std::string& name) const { return staging_ / name; }

  void commit() {
    if (fs::exists(target_)) fs::remove(target_);
    if (target_.has_parent_path()) fs::create_directories(target_.parent_path());
    fs::rename(staging_, target_);
  }

 private:
  fs::path target_;
  fs::path staging_;
};

std::size_t resolve_workers(const Options& o, std::size_t from_config) {
  if (o.workers) return *o.workers;
  if (const char* env = std::getenv("KWSF_WORKERS"); env && *env) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    require(end && *end == '\0' && v >= 1, ErrorCode::kConfig, std::string("KWSF_WORKERS must be a positive integer, got '") + env + "'");
    return static_cast<std::size_t>(v);
  }
  return from_config;
}

RunConfig load_config(const Options& o) {
  RunConfig c = o.config.empty() ? RunConfig{} : load_run_config(o.config);
  if (o.seed) c.seed = *o.seed;
  c.workers = resolve_workers(o, c.workers);
  if (!o.root.empty()) c.data.root = o.root;
  if (o.n_per_class) c.fixture.n_per_class = *o.n_per_class;
  if (!o.checkpoint.empty()) c.eval.checkpoint = o.checkpoint;
  if (!o.split.empty()) c.eval.split = split_from_name(o.split);
  c.resolve();
  return c;
}

void write_run_json(const OutputDir& dir, const std::string& subcommand, const RunConfig& c) {
  Json j;
  j["subcommand"] = subcommand;
  j["versions"] = {{"kwsf", kVersion}, {"checkpoint_format", model::kCheckpointVersion}};
  j["config"] = run_config_to_json(c);
  trainer::write_text_file(dir / "run.json", j.dump(2) + "\n");
}

std::vector<ManifestEntry> obtain_manifest(const RunConfig& c, const OutputDir& dir) {
  std::vector<ManifestEntry> entries;
  if (c.data.manifest) {
    entries = read_manifest(*c.data.manifest);
  } else {
    require(!c.data.root.empty(), ErrorCode::kConfig, "data.root (or data.manifest) must be set");
    entries = build_manifest(c.data.root, c.data.split);
  }
  write_manifest(dir / "manifest.jsonl", entries);
  return entries;
}

std::optional<fs::path> noise_dir(const RunConfig& c) {
  if (c.data.root.empty()) return std::nullopt;
  return c.data.root / "_background_noise_";
}

std::map<Split, std::size_t> split_counts(const std::vector<ManifestEntry>& entries) {
  std::map<Split, std::size_t> counts{
      {Split::kTrainLabeled, 0}, {Split::kTrainUnlabeled, 0}, {Split::kHoldout, 0}, {Split::kValidation, 0}};
  for (const auto& e : entries) ++counts[e.split];
  return counts;
}

std::string fixed3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

int cmd_prepare_data(const Options& o, std::ostream& out) {
  const RunConfig c = load_config(o);
  require(!c.data.root.empty(), ErrorCode::kConfig, "prepare-data needs --root or data.root");
  require(fs::is_directory(c.data.root), ErrorCode::kIo, "dataset root not found: " + c.data.root.string());
  OutputDir dir(o.out);
  write_run_json(dir, "prepare-data", c);
  const auto entries = build_manifest(c.data.root, c.data.split);
  write_manifest(dir / "manifest.jsonl", entries);
  for (const auto& [split, n] : split_counts(entries)) out << split_name(split) << ' ' << n << '\n';
  dir.commit();
  return kExitOk;
}

int cmd_make_fixture(const Options& o, std::ostream& out) {
  const RunConfig c = load_config(o);
  OutputDir dir(o.out);
  write_run_json(dir, "make-fixture", c);
  const std::size_t n = write_fixture(dir / "", c.fixture);
  dir.commit();
  out << "wrote " << n << " word files to " << o.out << '\n';
  return kExitOk;
}

int cmd_train(const Options& o, std::ostream& out) {
  const RunConfig c = load_config(o);
  OutputDir dir(o.out);
  write_run_json(dir, "train", c);
  const auto entries = obtain_manifest(c, dir);
  const auto data = trainer::load_train_data(entries, noise_dir(c));
  const trainer::PipelineConfig pipeline{c.features, c.augment};

  std::vector<trainer::EpochMetrics> seen;
  trainer::write_text_file(dir / "metrics.csv", trainer::metrics_csv(seen, c.train.record_student));
  trainer::LoopCallbacks callbacks;
  callbacks.on_epoch = [&](const trainer::EpochMetrics& m, const trainer::Trainer&) {
    seen.push_back(m);
    trainer::write_text_file(dir / "metrics.csv", trainer::metrics_csv(seen, c.train.record_student));
    out << "epoch " << m.epoch << " class_loss " << fixed3(m.class_loss) << " cons_loss " << fixed3(m.consistency_loss)
        << " holdout_acc " << (m.holdout_accuracy ? fixed3(*m.holdout_accuracy) : "-") << " val_acc "
        << (m.validation_accuracy ? fixed3(*m.validation_accuracy) : "-") << '\n';
  };
  const auto result = trainer::train_loop(c.network, c.train, data, pipeline, callbacks);
  model::save_checkpoint(result.checkpoint, (dir / "checkpoint.ckpt").string());

  trainer::Trainer evaluator(result.checkpoint, c.train, data, pipeline);
  for (Split s : {Split::kHoldout, Split::kValidation}) {
    if (data.split(s).empty()) continue;
    const auto r = evaluator.evaluate_params(result.checkpoint.model(), s);
    trainer::write_text_file(dir / ("confusion_" + std::string(split_name(s)) + ".csv"),
                             trainer::confusion_csv(r.confusion));
    out << split_name(s) << " accuracy " << fixed3(r.accuracy) << '\n';
  }
  dir.commit();
  return kExitOk;
}

int cmd_pbt(const Options& o, std::ostream& out) {
  const RunConfig c = load_config(o);
  OutputDir dir(o.out);
  write_run_json(dir, "pbt", c);

  std::optional<trainer::TrainData> data;
  std::unique_ptr<pbt::MemberBackend> backend;
  std::unique_ptr<pbt::CheckpointStore> store;
  if (c.pbt.surrogate) {
    backend = std::make_unique<pbt::SurrogateBackend>();
    store = std::make_unique<pbt::MemoryStore>();
  } else {
    const auto entries = obtain_manifest(c, dir);
    data = trainer::load_train_data(entries, noise_dir(c));
    backend = std::make_unique<pbt::TrainerBackend>(c.network, c.train, *data,
                                                    trainer::PipelineConfig{c.features, c.augment},
                                                    c.pbt.epochs_per_generation);
    store = std::make_unique<pbt::DirectoryStore>(dir / "checkpoints");
  }
  const auto result = pbt::run_pbt(c.pbt, *backend, *store, c.workers,
                                   [&](std::size_t g, const std::vector<pbt::PopulationMember>& pop) {
                                     double best = 0.0;
                                     for (const auto& m : pop) best = std::max(best, m.holdout_score.value_or(0.0));
                                     out << "generation " << g << " best " << fixed3(best) << '\n';
                                   });
  pbt::export_trajectory(result.trajectory, dir / "trajectory.jsonl");
  trainer::write_text_file(dir / "population.csv", pbt::population_csv(result.final_population));
  Json best;
  best["score"] = result.best_score;
  best["generation"] = result.best_generation;
  best["member_id"] = result.best_member;
  best["hyper_params"] = pbt::hyper_params_to_json(result.best_hyper);
  trainer::write_text_file(dir / "best.json", best.dump(2) + "\n");
  if (!c.pbt.surrogate) {
    std::ofstream f(dir / "best.ckpt", std::ios::binary);
    f.write(reinterpret_cast<const char*>(result.best_checkpoint.data()),
            static_cast<std::streamsize>(result.best_checkpoint.size()));
    require(f.good(), ErrorCode::kIo, "cannot write best.ckpt");
  }
  out << "best score " << fixed3(result.best_score) << " (generation " << result.best_generation << ", member "
      << result.best_member << ")\n";
  dir.commit();
  return kExitOk;
}

int cmd_eval(const Options& o, std::ostream& out) {
  const RunConfig c = load_config(o);
  require(!c.eval.checkpoint.empty(), ErrorCode::kConfig, "eval needs --checkpoint or eval.checkpoint");
  const auto ck = model::load_checkpoint(c.eval.checkpoint.string());
  OutputDir dir(o.out);
  write_run_json(dir, "eval", c);
  const auto entries = obtain_manifest(c, dir);
  const auto data = trainer::load_train_data(entries, noise_dir(c));
  trainer::TrainConfig tc = c.train;
  tc.dropout_rate = ck.config.dropout_rate;
  trainer::Trainer evaluator(ck, tc, data, {c.features, c.augment});
  const auto r = evaluator.evaluate_params(ck.model(), c.eval.split);
  trainer::write_text_file(dir / "confusion.csv", trainer::confusion_csv(r.confusion));
  out << "accuracy " << fixed3(r.accuracy) << '\n';
  dir.commit();
  return kExitOk;
}

int cmd_export_trajectory(const Options& o, std::ostream& out) {
  const RunConfig c = load_config(o);
  require(!o.input.empty(), ErrorCode::kConfig, "export-trajectory needs --input <trajectory.jsonl>");
  std::ifstream in(o.input);
  require(in.good(), ErrorCode::kIo, "cannot open " + o.input);
  std::stringstream ss;
  ss << in.rdbuf();
  const auto events = pbt::parse_trajectory(ss.str());
  OutputDir dir(o.out);
  write_run_json(dir, "export-trajectory", c);
  pbt::export_trajectory(events, dir / "trajectory.jsonl");
  std::ostringstream csv;
  csv << "generation,member_id,parent_id,learning_rate,consistency_weight,dropout_rate,holdout_score\n";
  char buf[128];
  for (const auto& e : pbt::parse_trajectory(pbt::trajectory_jsonl(events))) {
    csv << e.generation << ',' << e.member_id << ',' << (e.parent_id ? std::to_string(*e.parent_id) : "");
    std::snprintf(buf, sizeof buf, ",%.9g,%.9g,%.9g,%.9g\n", e.hp_after.learning_rate, e.hp_after.consistency_weight,
                  e.hp_after.dropout_rate, e.holdout_score);
    csv << buf;
  }
  trainer::write_text_file(dir / "trajectory.csv", csv.str());
  out << "exported " << events.size() << " events\n";
  dir.commit();
  return kExitOk;
}

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kDiverged: return kExitDiverged;
    case ErrorCode::kCorruptCheckpoint: return kExitCorrupt;
    default: return kExitInput;
  }
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Keyword-spotting training with mean teacher and population-based training", "kwsf"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);
  Options o;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON run configuration");
    sub->add_option("--out", o.out, "output directory")->required();
    sub->add_option("--seed", o.seed, "override the run seed");
    sub->add_option("--workers", o.workers, "PBT worker limit (falls back to KWSF_WORKERS)");
    return sub;
  };
  auto* prepare = common(app.add_subcommand("prepare-data", "split a dataset tree into a manifest"));
  prepare->add_option("--root", o.root, "dataset root (overrides data.root)");
  auto* fixture = common(app.add_subcommand("make-fixture", "write the synthetic fixture dataset"));
  fixture->add_option("--n-per-class", o.n_per_class, "clips per in-vocabulary word");
  auto* train = common(app.add_subcommand("train", "supervised or mean-teacher training"));
  train->add_option("--root", o.root, "dataset root (overrides data.root)");
  auto* pbt_cmd = common(app.add_subcommand("pbt", "population-based training"));
  pbt_cmd->add_option("--root", o.root, "dataset root (overrides data.root)");
  auto* eval = common(app.add_subcommand("eval", "evaluate a checkpoint on a split"));
  eval->add_option("--root", o.root, "dataset root (overrides data.root)");
  eval->add_option("--checkpoint", o.checkpoint, "checkpoint file");
  eval->add_option("--split", o.split, "train_labeled, holdout or validation");
  auto* export_cmd = common(app.add_subcommand("export-trajectory", "normalize a trajectory log and flatten it to CSV"));
  export_cmd->add_option("--input", o.input, "trajectory JSONL")->required();

  try {
    std::vector<std::string> args;
    for (int i = argc - 1; i > 0; --i) args.emplace_back(argv[i]);
    app.parse(std::move(args));
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << (dynamic_cast<const CLI::CallForVersion*>(&e) ? std::string(kVersion) + "\n" : app.help());
      return kExitOk;
    }
    err << "error: " << e.what() << '\n';
    return kExitInput;
  }

  try {
    if (prepare->parsed()) return cmd_prepare_data(o, out);
    if (fixture->parsed()) return cmd_make_fixture(o, out);
    if (train->parsed()) return cmd_train(o, out);
    if (pbt_cmd->parsed()) return cmd_pbt(o, out);
    if (eval->parsed()) return cmd_eval(o, out);
    if (export_cmd->parsed()) return cmd_export_trajectory(o, out);
  } catch (const Error& e) {
    err << "error [" << error_code_name(e.code()) << "]: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const fs::filesystem_error& e) {
    err << "error [io]: " << e.what() << '\n';
    return kExitInput;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return kExitInternal;
  }
  return kExitInput;
}

}  // namespace kwsf::cli
