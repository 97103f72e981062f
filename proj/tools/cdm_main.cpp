// cdm: train, sample, evaluate and self-test Clifford diffusion models.
//
// Exit codes: 0 ok, 1 self-test failure, 2 bad config or arguments,
// 3 missing or unreadable data, 4 mode mismatch, 5 empty sample set.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "cdm/config.hpp"
#include "cdm/container.hpp"
#include "cdm/diffusion.hpp"
#include "cdm/moldata.hpp"
#include "cdm/pipeline.hpp"
#include "cdm/selftest.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum Exit : int { kOk = 0, kSelftestFailed = 1, kBadConfig = 2, kMissingData = 3, kModeMismatch = 4, kEmptySamples = 5 };

struct CliFailure {
  int code;
  std::string message;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

void configure_logging() {
  spdlog::set_pattern("[%l] %v");
  const char* level = std::getenv("CDM_LOG_LEVEL");
  spdlog::set_level(level ? spdlog::level::from_str(level) : spdlog::level::info);
}

std::vector<cdm::MolecularGraph> generate(const cdm::DiffusionModel& model, std::size_t n, std::uint64_t seed) {
  cdm::SampleOptions opts;
  opts.seed = seed;
  return cdm::sample(model, n, opts);
}

// ---- train ---------------------------------------------------------------------------------

int cmd_train(const std::string& config_path, std::size_t eval_samples) {
  cdm::RunConfig cfg;
  try {
    cfg = cdm::load_config(config_path);
  } catch (const cdm::ConfigError& e) {
    throw CliFailure{kBadConfig, e.what()};
  }
  std::vector<cdm::MolecularGraph> data;
  try {
    data = cdm::load_training_data(cfg);
  } catch (const cdm::DataError& e) {
    throw CliFailure{kMissingData, e.what()};
  }
  spdlog::info("training {} model on {} molecules for {} steps (seed {})", cdm::to_string(cfg.mode), data.size(),
               cfg.steps, cfg.seed);

  const auto start = std::chrono::steady_clock::now();
  const std::size_t every = std::max<std::size_t>(1, cfg.steps / 20);
  const cdm::TrainResult result = cdm::train_model(cfg, data, [&](std::size_t step, double loss, double smoothed) {
    if (step % every == 0 || step + 1 == cfg.steps) {
      spdlog::info("step {:>6}  loss {:.5f}  smoothed {:.5f}", step, loss, smoothed);
    }
  });
  const double train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  const fs::path out(cfg.out_dir);
  fs::create_directories(out);
  const json echo = cfg.to_json();
  cdm::save_checkpoint(out / "checkpoint.cdmc", result.model, {{"config", echo}});
  const std::string id = cdm::checkpoint_id(result.model);
  write_text(out / "loss.csv", cdm::loss_csv(result.loss, result.smoothed));

  json report = {{"config", echo},
                 {"checkpoint_id", id},
                 {"wall_clock_seconds", {{"train", train_seconds}}},
                 {"loss", {{"initial_smoothed", result.smoothed.front()},
                           {"final_smoothed", result.smoothed.back()},
                           {"curve", "loss.csv"}}}};
  if (eval_samples > 0) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto samples = generate(result.model, eval_samples, cfg.seed);
    const cdm::MetricReport metrics = cdm::evaluate(samples);
    report["metrics"] = metrics.to_json();
    report["metrics"]["sample_seed"] = cfg.seed;
    report["wall_clock_seconds"]["sample"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << metrics.table();
  }
  write_text(out / "report.json", report.dump(2) + "\n");
  spdlog::info("wrote {} (checkpoint id {})", (out / "checkpoint.cdmc").string(), id);
  return kOk;
}

// ---- sample --------------------------------------------------------------------------------

int cmd_sample(const std::string& checkpoint, std::size_t num, std::uint64_t seed, const std::string& out_path,
               const std::optional<std::string>& mode_text, const std::optional<std::string>& config_path) {
  if (num == 0) throw CliFailure{kBadConfig, "--num must be positive"};
  std::optional<cdm::DiffusionMode> expected;
  if (mode_text) {
    expected = cdm::parse_mode(*mode_text);
    if (!expected) throw CliFailure{kBadConfig, "--mode must be one_vector or all_grade"};
  }
  if (config_path) {
    try {
      const cdm::DiffusionMode m = cdm::load_config(*config_path).mode;
      if (expected && *expected != m) throw CliFailure{kModeMismatch, "--mode disagrees with the config's mode"};
      expected = m;
    } catch (const cdm::ConfigError& e) {
      throw CliFailure{kBadConfig, e.what()};
    }
  }
  if (!fs::exists(checkpoint)) throw CliFailure{kMissingData, "checkpoint not found: " + checkpoint};
  cdm::DiffusionModel model;
  std::string id;
  try {
    model = cdm::load_checkpoint(checkpoint, &id);
  } catch (const std::runtime_error& e) {
    throw CliFailure{kMissingData, e.what()};
  }
  if (expected && *expected != model.spec.mode) {
    throw CliFailure{kModeMismatch, "checkpoint was trained in " + std::string(cdm::to_string(model.spec.mode)) +
                                        " mode, but " + std::string(cdm::to_string(*expected)) + " was requested"};
  }
  const auto mols = generate(model, num, seed);
  std::vector<std::string> comments;
  for (std::size_t i = 0; i < mols.size(); ++i) {
    comments.push_back("seed=" + std::to_string(seed) + " checkpoint=" + id + " index=" + std::to_string(i));
  }
  cdm::write_xyz(out_path, mols, comments);
  std::cout << "seed " << seed << "\n";
  spdlog::info("wrote {} molecules to {}", mols.size(), out_path);
  return kOk;
}

// ---- eval ----------------------------------------------------------------------------------

int cmd_eval(const std::string& samples_path, const std::optional<std::string>& report_path) {
  if (!fs::exists(samples_path)) throw CliFailure{kMissingData, "samples not found: " + samples_path};
  std::vector<cdm::MolecularGraph> mols;
  try {
    mols = fs::is_directory(samples_path) ? cdm::load_xyz_dir(samples_path) : cdm::load_xyz(samples_path);
  } catch (const std::runtime_error& e) {
    throw CliFailure{kMissingData, e.what()};
  }
  if (mols.empty()) throw CliFailure{kEmptySamples, "sample set is empty: " + samples_path};
  const cdm::MetricReport metrics = cdm::evaluate(mols);
  std::cout << metrics.table();
  if (report_path) {
    const json report = {{"samples", samples_path}, {"metrics", metrics.to_json()}};
    write_text(*report_path, report.dump(2) + "\n");
  }
  return kOk;
}

// ---- selftest ------------------------------------------------------------------------------

int cmd_selftest(bool corrupt) {
  cdm::SelftestOptions opts;
  opts.corrupt_cayley = corrupt;
  bool ok = true;
  for (const auto& r : cdm::run_selftest(opts)) {
    std::printf("%-4s %-15s max_error=%.3e tol=%.1e %s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.max_error,
                r.tolerance, r.detail.c_str());
    ok = ok && r.passed;
  }
  return ok ? kOk : kSelftestFailed;
}

}  // namespace

int main(int argc, char** argv) {
  configure_logging();
  CLI::App app{"Clifford diffusion models: train, sample, eval, selftest"};
  app.require_subcommand(1);

  std::string config_path;
  std::size_t eval_samples = 64;
  auto* train = app.add_subcommand("train", "Train a model from a JSON config");
  train->add_option("--config", config_path, "Run configuration")->required();
  train->add_option("--eval-samples", eval_samples, "Molecules sampled for the report metrics (0 skips)");

  std::string checkpoint, out_path;
  std::size_t num = 0;
  std::uint64_t seed = 0;
  std::optional<std::string> mode, sample_config;
  auto* sample = app.add_subcommand("sample", "Generate molecules from a checkpoint");
  sample->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  sample->add_option("--num", num, "Number of molecules")->required();
  sample->add_option("--seed", seed, "Sampling seed")->required();
  sample->add_option("--out", out_path, "Output XYZ file")->required();
  sample->add_option("--mode", mode, "Expected diffusion mode (one_vector|all_grade)");
  sample->add_option("--config", sample_config, "Config whose mode must match the checkpoint");

  std::string samples_path;
  std::optional<std::string> report_path;
  auto* eval = app.add_subcommand("eval", "Stability, validity and uniqueness of XYZ samples");
  eval->add_option("--samples", samples_path, "XYZ file or directory of XYZ files")->required();
  eval->add_option("--report", report_path, "Write the metrics as JSON");

  bool corrupt = false;
  auto* selftest = app.add_subcommand("selftest", "Run the property suites");
  selftest->add_flag("--corrupt-cayley", corrupt, "Flip one Cayley table sign (mutation check)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kBadConfig;
  }

  try {
    if (*train) return cmd_train(config_path, eval_samples);
    if (*sample) return cmd_sample(checkpoint, num, seed, out_path, mode, sample_config);
    if (*eval) return cmd_eval(samples_path, report_path);
    if (*selftest) return cmd_selftest(corrupt);
  } catch (const CliFailure& f) {
    spdlog::error("{}", f.message);
    return f.code;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return kOk;
}
