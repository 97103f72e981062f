#include "cdm/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace cdm {

namespace {

using nlohmann::json;

void reject_unknown(const json& obj, const std::string& where, const std::set<std::string>& allowed) {
  if (!obj.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, _] : obj.items()) {
    if (!allowed.count(key)) {
      throw ConfigError("unknown config key '" + (where.empty() ? key : where + "." + key) + "'");
    }
  }
}

std::string path_of(const std::string& where, const std::string& key) {
  return where.empty() ? key : where + "." + key;
}

std::size_t positive_count(const json& obj, const std::string& where, const std::string& key, std::size_t fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_number_integer() || v.get<long long>() <= 0) {
    throw ConfigError(path_of(where, key) + " must be a positive integer");
  }
  return v.get<std::size_t>();
}

std::string text_field(const json& obj, const std::string& where, const std::string& key, std::string fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj.at(key).is_string()) throw ConfigError(path_of(where, key) + " must be a string");
  return obj.at(key).get<std::string>();
}

const json& section(const json& doc, const std::string& key, const std::set<std::string>& allowed) {
  static const json empty = json::object();
  if (!doc.contains(key)) return empty;
  reject_unknown(doc.at(key), key, allowed);
  return doc.at(key);
}

}  // namespace

nlohmann::json RunConfig::to_json() const {
  json data = {{"source", source == DataSource::Synth ? "synth" : "xyz_dir"},
               {"kind", std::string(cdm::to_string(kind))},
               {"n_samples", n_samples}};
  if (!data_path.empty()) data["path"] = data_path;
  return {{"mode", std::string(cdm::to_string(mode))},
          {"model", {{"layers", model.layers}, {"mv_channels", model.mv_channels},
                     {"scalar_hidden", model.scalar_hidden}, {"encoder_layers", encoder_layers}}},
          {"diffusion", {{"timesteps", timesteps}, {"schedule", std::string(cdm::to_string(schedule))}}},
          {"train", {{"lr", lr}, {"batch_size", batch_size}, {"steps", steps}, {"seed", seed}, {"ema_decay", ema_decay}}},
          {"data", data},
          {"out_dir", out_dir}};
}

RunConfig config_from_json(const json& doc) {
  reject_unknown(doc, "", {"mode", "model", "diffusion", "train", "data", "out_dir"});
  RunConfig cfg;

  if (!doc.contains("mode")) throw ConfigError("config key 'mode' is required");
  const std::string mode = text_field(doc, "", "mode", "");
  auto m = parse_mode(mode);
  if (!m) throw ConfigError("mode must be one_vector or all_grade, got '" + mode + "'");
  cfg.mode = *m;

  const json& model = section(doc, "model", {"layers", "mv_channels", "scalar_hidden", "encoder_layers"});
  cfg.model.layers = positive_count(model, "model", "layers", cfg.model.layers);
  cfg.model.mv_channels = positive_count(model, "model", "mv_channels", cfg.model.mv_channels);
  cfg.model.scalar_hidden = positive_count(model, "model", "scalar_hidden", cfg.model.scalar_hidden);
  cfg.encoder_layers = positive_count(model, "model", "encoder_layers", std::max<std::size_t>(1, cfg.model.layers / 2));

  const json& diffusion = section(doc, "diffusion", {"timesteps", "schedule"});
  const std::size_t T = positive_count(diffusion, "diffusion", "timesteps", 1000);
  if (T < 2) throw ConfigError("diffusion.timesteps must be at least 2");
  if (T > 1000000) throw ConfigError("diffusion.timesteps is unreasonably large");
  cfg.timesteps = static_cast<int>(T);
  const std::string sched = text_field(diffusion, "diffusion", "schedule", "polynomial");
  auto sk = parse_schedule_kind(sched);
  if (!sk) throw ConfigError("diffusion.schedule must be polynomial or cosine, got '" + sched + "'");
  cfg.schedule = *sk;

  const json& train = section(doc, "train", {"lr", "batch_size", "steps", "seed", "ema_decay"});
  if (train.contains("lr")) {
    if (!train.at("lr").is_number() || !(train.at("lr").get<double>() > 0.0)) {
      throw ConfigError("train.lr must be a positive number");
    }
    cfg.lr = train.at("lr").get<double>();
  }
  if (train.contains("ema_decay")) {
    const json& e = train.at("ema_decay");
    if (!e.is_number() || e.get<double>() < 0.0 || e.get<double>() >= 1.0) {
      throw ConfigError("train.ema_decay must be a number in [0, 1)");
    }
    cfg.ema_decay = e.get<double>();
  }
  cfg.batch_size = positive_count(train, "train", "batch_size", cfg.batch_size);
  cfg.steps = positive_count(train, "train", "steps", cfg.steps);
  if (train.contains("seed")) {
    const json& s = train.at("seed");
    if (!s.is_number_integer() || (s.is_number_integer() && !s.is_number_unsigned() && s.get<long long>() < 0)) {
      throw ConfigError("train.seed must be a non-negative integer");
    }
    cfg.seed = s.get<std::uint64_t>();
  }

  const json& data = section(doc, "data", {"source", "kind", "n_samples", "path"});
  const std::string source = text_field(data, "data", "source", "synth");
  if (source == "synth") {
    cfg.source = DataSource::Synth;
  } else if (source == "xyz_dir") {
    cfg.source = DataSource::XyzDir;
  } else {
    throw ConfigError("data.source must be synth or xyz_dir, got '" + source + "'");
  }
  const std::string kind = text_field(data, "data", "kind", "rigid_shape");
  auto k = parse_synth_kind(kind);
  if (!k) throw ConfigError("data.kind must be rigid_shape or two_body, got '" + kind + "'");
  cfg.kind = *k;
  cfg.n_samples = positive_count(data, "data", "n_samples", cfg.n_samples);
  cfg.data_path = text_field(data, "data", "path", "");
  if (cfg.source == DataSource::XyzDir && cfg.data_path.empty()) {
    throw ConfigError("data.path is required when data.source is xyz_dir");
  }

  cfg.out_dir = text_field(doc, "", "out_dir", cfg.out_dir);
  if (cfg.out_dir.empty()) throw ConfigError("out_dir must not be empty");
  return cfg;
}

RunConfig parse_config(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return config_from_json(doc);
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

}  // namespace cdm
