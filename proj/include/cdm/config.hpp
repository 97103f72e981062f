#pragma once

// Run configuration (JSON). Every key is optional except "mode"; unknown
// keys anywhere are rejected.
//
// {
//   "mode": "one_vector" | "all_grade",
//   "model":     {"layers": 4, "mv_channels": 16, "scalar_hidden": 64, "encoder_layers": 2},
//   "diffusion": {"timesteps": 1000, "schedule": "polynomial" | "cosine"},
//   "train":     {"lr": 1e-3, "batch_size": 32, "steps": 2000, "seed": 0, "ema_decay": 0.999},
//   "data":      {"source": "synth" | "xyz_dir", "kind": "rigid_shape" | "two_body",
//                 "n_samples": 1000, "path": "dir/with/xyz"},
//   "out_dir": "runs/example"
// }

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "cdm/diffusion.hpp"
#include "cdm/moldata.hpp"
#include "json.hpp"

namespace cdm {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class DataSource { Synth, XyzDir };

struct RunConfig {
  DiffusionMode mode = DiffusionMode::OneVector;
  NetConfig model;
  std::size_t encoder_layers = 2;
  int timesteps = 1000;
  ScheduleKind schedule = ScheduleKind::Polynomial;
  double lr = 1e-3;
  std::size_t batch_size = 32;
  std::size_t steps = 2000;
  std::uint64_t seed = 0;
  /// Decay of the parameter average that is saved and sampled from; 0 keeps
  /// the raw Adam iterate.
  double ema_decay = 0.999;
  DataSource source = DataSource::Synth;
  SynthKind kind = SynthKind::RigidShape;
  std::size_t n_samples = 1000;
  std::string data_path;
  std::string out_dir = "run";

  ModelSpec model_spec() const { return {mode, model, encoder_layers, timesteps, schedule}; }
  /// Canonical form with every field present.
  nlohmann::json to_json() const;
};

/// Throws ConfigError naming the offending key.
RunConfig parse_config(const std::string& text);
RunConfig config_from_json(const nlohmann::json& doc);
RunConfig load_config(const std::filesystem::path& path);

}  // namespace cdm
