#include "kwsf/cli/config.hpp"

#include <fstream>
#include <sstream>

#include "kwsf/model/checkpoint.hpp"

namespace kwsf::cli {

Json feature_config_to_json(const dsp::FeatureConfig& c) {
  Json j;
  j["window_size"] = c.window_size;
  j["hop"] = c.hop;
  j["n_fft"] = c.n_fft;
  j["n_mels"] = c.n_mels;
  j["f_min"] = c.f_min;
  j["f_max"] = c.f_max;
  j["log_floor"] = c.log_floor;
  j["window"] = c.window == dsp::WindowKind::kHann ? "hann" : "rectangular";
  return j;
}

dsp::FeatureConfig feature_config_from_json(const Json& j) {
  dsp::FeatureConfig c;
  std::string window = "hann";
  JsonReader r(j, "features");
  r.get("window_size", c.window_size)
      .get("hop", c.hop)
      .get("n_fft", c.n_fft)
      .get("n_mels", c.n_mels)
      .get("f_min", c.f_min)
      .get("f_max", c.f_max)
      .get("log_floor", c.log_floor)
      .get("window", window);
  r.finish();
  if (window == "hann") {
    c.window = dsp::WindowKind::kHann;
  } else if (window == "rectangular") {
    c.window = dsp::WindowKind::kRectangular;
  } else {
    fail(ErrorCode::kConfig, "features.window must be hann or rectangular");
  }
  return c;
}

Json augment_policy_to_json(const augment::AugmentPolicy& p) {
  Json j;
  j["p_noise"] = p.p_noise;
  j["p_stretch"] = p.p_stretch;
  j["p_pitch"] = p.p_pitch;
  j["p_background"] = p.p_background;
  j["noise_levels"] = p.noise_levels;
  j["stretch_rates"] = p.stretch_rates;
  j["pitch_semitones"] = p.pitch_semitones;
  return j;
}

augment::AugmentPolicy augment_policy_from_json(const Json& j) {
  augment::AugmentPolicy p;
  JsonReader r(j, "augment");
  r.get("p_noise", p.p_noise)
      .get("p_stretch", p.p_stretch)
      .get("p_pitch", p.p_pitch)
      .get("p_background", p.p_background)
      .get("noise_levels", p.noise_levels)
      .get("stretch_rates", p.stretch_rates)
      .get("pitch_semitones", p.pitch_semitones);
  r.finish();
  p.validate();
  return p;
}

namespace {

Json data_config_to_json(const DataConfig& d) {
  Json j;
  j["root"] = d.root.generic_string();
  j["manifest"] = d.manifest ? Json(d.manifest->generic_string()) : Json(nullptr);
  j["labeled_fraction"] = d.split.labeled_fraction;
  j["holdout_fraction"] = d.split.holdout_fraction;
  j["validation_fraction"] = d.split.validation_fraction;
  j["validation_list"] = d.split.validation_list ? Json(d.split.validation_list->generic_string()) : Json(nullptr);
  j["unlabeled_words"] = d.split.unlabeled_words;
  j["oov_to_unlabeled"] = d.split.oov_to_unlabeled;
  j["silence_fraction"] = d.split.silence_fraction;
  return j;
}

DataConfig data_config_from_json(const Json& j) {
  DataConfig d;
  JsonReader r(j, "data");
  std::string root;
  r.get("root", root)
      .get("labeled_fraction", d.split.labeled_fraction)
      .get("holdout_fraction", d.split.holdout_fraction)
      .get("validation_fraction", d.split.validation_fraction)
      .get("unlabeled_words", d.split.unlabeled_words)
      .get("oov_to_unlabeled", d.split.oov_to_unlabeled)
      .get("silence_fraction", d.split.silence_fraction);
  d.root = root;
  if (r.has("manifest") && !j.at("manifest").is_null()) d.manifest = j.at("manifest").get<std::string>();
  if (r.has("validation_list") && !j.at("validation_list").is_null()) {
    d.split.validation_list = j.at("validation_list").get<std::string>();
  }
  r.finish();
  return d;
}

Json fixture_config_to_json(const FixtureConfig& f) {
  Json j;
  j["n_per_class"] = f.n_per_class;
  j["words"] = f.words;
  j["oov_words"] = f.oov_words;
  j["n_oov_per_word"] = f.n_oov_per_word;
  j["n_speakers"] = f.n_speakers;
  j["n_noise_files"] = f.n_noise_files;
  j["noise_seconds"] = f.noise_seconds;
  return j;
}

FixtureConfig fixture_config_from_json(const Json& j) {
  FixtureConfig f;
  JsonReader r(j, "fixture");
  r.get("n_per_class", f.n_per_class)
      .get("words", f.words)
      .get("oov_words", f.oov_words)
      .get("n_oov_per_word", f.n_oov_per_word)
      .get("n_speakers", f.n_speakers)
      .get("n_noise_files", f.n_noise_files)
      .get("noise_seconds", f.noise_seconds);
  r.finish();
  return f;
}

model::NetworkConfig preset(const std::string& name) {
  if (name == "edge") return model::edge_config();
  if (name == "full") return model::full_config();
  fail(ErrorCode::kConfig, "network.preset must be edge or full, got '" + name + "'");
}

}  // namespace

void RunConfig::resolve() {
  data.split.seed = seed;
  train.seed = seed;
  pbt.seed = seed;
  fixture.seed = seed;
  features.validate(kSampleRate);
  network.input_height = features.n_mels;
  network.input_width = features.n_frames(kSampleRate);
  network.dropout_rate = train.dropout_rate;
  network.validate();
  train.validate();
  pbt.validate();
  augment.validate();
  require(workers >= 1, ErrorCode::kConfig, "workers must be >= 1");
}

RunConfig run_config_from_json(const Json& j) {
  RunConfig c;
  JsonReader r(j, "config");
  r.get("seed", c.seed).get("workers", c.workers);
  if (r.has("data")) c.data = data_config_from_json(j.at("data"));
  if (r.has("features")) c.features = feature_config_from_json(j.at("features"));
  if (r.has("augment")) c.augment = augment_policy_from_json(j.at("augment"));
  if (r.has("network")) {
    Json net = j.at("network");
    require(net.is_object(), ErrorCode::kConfig, "network must be an object");
    if (net.contains("preset")) {
      c.network_preset = net.at("preset").get<std::string>();
      net.erase("preset");
    }
    // Overrides are applied on top of the preset.
    Json merged = model::network_config_to_json(preset(c.network_preset));
    merged.update(net);
    c.network = model::network_config_from_json(merged);
  }
  if (r.has("train")) {
    Json train = j.at("train");
    require(!train.contains("seed"), ErrorCode::kConfig, "train.seed is not configurable; set the top-level seed");
    c.train = trainer::train_config_from_json(train);
  }
  if (r.has("pbt")) {
    Json pbt = j.at("pbt");
    require(!pbt.contains("seed"), ErrorCode::kConfig, "pbt.seed is not configurable; set the top-level seed");
    c.pbt = pbt::pbt_config_from_json(pbt);
  }
  if (r.has("fixture")) c.fixture = fixture_config_from_json(j.at("fixture"));
  if (r.has("eval")) {
    JsonReader er(j.at("eval"), "eval");
    std::string checkpoint, split = std::string(split_name(c.eval.split));
    er.get("checkpoint", checkpoint).get("split", split);
    er.finish();
    c.eval.checkpoint = checkpoint;
    c.eval.split = split_from_name(split);
  }
  r.finish();
  return c;
}

Json run_config_to_json(const RunConfig& c) {
  Json j;
  j["seed"] = c.seed;
  j["workers"] = c.workers;
  j["data"] = data_config_to_json(c.data);
  j["features"] = feature_config_to_json(c.features);
  j["augment"] = augment_policy_to_json(c.augment);
  Json net = model::network_config_to_json(c.network);
  Json with_preset;
  with_preset["preset"] = c.network_preset;
  with_preset.update(net);
  j["network"] = with_preset;
  Json train = trainer::train_config_to_json(c.train);
  train.erase("seed");
  j["train"] = train;
  Json pbt = pbt::pbt_config_to_json(c.pbt);
  pbt.erase("seed");
  j["pbt"] = pbt;
  j["fixture"] = fixture_config_to_json(c.fixture);
  j["eval"] = {{"checkpoint", c.eval.checkpoint.generic_string()}, {"split", split_name(c.eval.split)}};
  return j;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::kIo, "cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  Json j;
  try {
    j = Json::parse(ss.str());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kConfig, "config " + path.string() + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace kwsf::cli
