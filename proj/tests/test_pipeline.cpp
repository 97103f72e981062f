#include "doctest.h"

#include <filesystem>

#include "cdm/config.hpp"
#include "cdm/container.hpp"
#include "cdm/pipeline.hpp"
#include "cdm/selftest.hpp"
#include "oracles.hpp"

using namespace cdm;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("cdm_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

RunConfig tiny_config(const std::string& mode) {
  return parse_config(R"({"mode": ")" + mode + R"(",
    "model": {"layers": 1, "mv_channels": 2, "scalar_hidden": 8, "encoder_layers": 1},
    "diffusion": {"timesteps": 10},
    "train": {"lr": 0.01, "batch_size": 4, "steps": 5, "seed": 3},
    "data": {"source": "synth", "kind": "rigid_shape", "n_samples": 16}})");
}

}  // namespace

TEST_CASE("config defaults and round trip") {
  const RunConfig c = parse_config(R"({"mode": "all_grade"})");
  CHECK(c.mode == DiffusionMode::AllGrade);
  CHECK(c.model.layers == 4);
  CHECK(c.encoder_layers == 2);
  CHECK(c.timesteps == 1000);
  const RunConfig back = config_from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK(parse_config(R"({"mode": "one_vector", "model": {"layers": 6}})").encoder_layers == 3);
}

TEST_CASE("config errors name the key") {
  auto message = [](const std::string& text) {
    try {
      parse_config(text);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  CHECK(message("{}").find("mode") != std::string::npos);
  CHECK(message(R"({"mode": "spinor"})").find("mode") != std::string::npos);
  CHECK(message(R"({"mode": "one_vector", "colour": 1})").find("colour") != std::string::npos);
  CHECK(message(R"({"mode": "one_vector", "train": {"lr": "fast"}})").find("lr") != std::string::npos);
  CHECK(message(R"({"mode": "one_vector", "diffusion": {"timesteps": 1}})").find("timesteps") != std::string::npos);
  CHECK(message(R"({"mode": "one_vector", "data": {"source": "xyz_dir"}})").find("path") != std::string::npos);
  CHECK(message("not json").find("no error") == std::string::npos);
  CHECK_THROWS_AS(load_config("/nonexistent/config.json"), ConfigError);
}

TEST_CASE("container round trip is byte-stable") {
  Container c;
  c.meta = {{"kind", "test"}, {"n", 3}};
  c.tensors.add("a", Tensor({2, 2}, std::vector<double>{1, -2, 3.5, 1e-300}));
  c.tensors.add("b", Tensor({3}, std::vector<double>{0.1, 0.2, 0.3}));
  const std::string bytes = serialize_container(c);
  CHECK(bytes.rfind("CDMC1 ", 0) == 0);
  const Container back = parse_container(bytes);
  CHECK(back.tensors == c.tensors);
  CHECK(back.meta == c.meta);
  CHECK(serialize_container(back) == bytes);
  CHECK(payload_id(back) == payload_id(c));
  CHECK(payload_id(c).size() == 16);

  CHECK_THROWS_AS(parse_container("CDMC2 3\n{}\n"), std::runtime_error);
  CHECK_THROWS_AS(parse_container(bytes.substr(0, bytes.size() - 4)), std::runtime_error);
  CHECK_THROWS_AS(parse_container("CDMC1 999\n{}"), std::runtime_error);
  CHECK_THROWS_AS(read_container("/nonexistent.cdmc"), std::runtime_error);
}

TEST_CASE("checkpoints and noise tapes survive a file round trip") {
  const fs::path dir = scratch("ckpt");
  DiffusionModel model = init_model(tiny_config("all_grade").model_spec(), 4);
  model.size_histogram = {0, 0, 1, 3};
  save_checkpoint(dir / "m.cdmc", model, {{"seed", 4}});
  std::string id;
  nlohmann::json extra;
  const DiffusionModel back = load_checkpoint(dir / "m.cdmc", &id, &extra);
  CHECK(back.params == model.params);
  CHECK(back.size_histogram == model.size_histogram);
  CHECK(back.spec.mode == DiffusionMode::AllGrade);
  CHECK(back.schedule.alpha_bar == model.schedule.alpha_bar);
  CHECK(id == checkpoint_id(model));
  CHECK(extra["seed"] == 4);

  // The id ignores the run echo but tracks every parameter bit.
  DiffusionModel nudged = model;
  nudged.params.get_mut(nudged.params.names()[0]).data[0] += 1e-12;
  CHECK(checkpoint_id(nudged) != id);

  Container c = model_to_container(model);
  c.meta["kind"] = "tape";
  CHECK_THROWS_AS(model_from_container(c), std::runtime_error);

  NoiseTape tape;
  SampleOptions opt;
  opt.seed = 8;
  opt.record = &tape;
  sample(model, 3, opt);
  const NoiseTape again = tape_from_container(parse_container(serialize_container(tape_to_container(tape))));
  CHECK(again.seed == tape.seed);
  CHECK(again.sizes == tape.sizes);
  REQUIRE(again.draws.size() == tape.draws.size());
  for (std::size_t m = 0; m < tape.draws.size(); ++m)
    for (std::size_t k = 0; k < tape.draws[m].size(); ++k) {
      CHECK(again.draws[m][k].eps_x == tape.draws[m][k].eps_x);
      CHECK(again.draws[m][k].eps_h == tape.draws[m][k].eps_h);
    }
  fs::remove_all(dir);
}

TEST_CASE("smoothing and loss csv") {
  const std::vector<double> s = smooth_losses({4, 2, 6, 8}, 2);
  CHECK(s == std::vector<double>{4, 3, 4, 7});
  CHECK(loss_csv({1.5}, {1.5}).rfind("step,loss,smoothed_loss\n0,", 0) == 0);
}

TEST_CASE("training is deterministic and updates parameters") {
  for (const char* mode : {"one_vector", "all_grade"}) {
    const RunConfig cfg = tiny_config(mode);
    const auto data = load_training_data(cfg);
    CHECK(data.size() == 16);
    std::size_t calls = 0;
    const TrainResult a = train_model(cfg, data, [&](std::size_t, double, double) { ++calls; });
    const TrainResult b = train_model(cfg, data);
    CHECK(calls == cfg.steps);
    CHECK(a.loss == b.loss);
    CHECK(a.model.params == b.model.params);
    CHECK(a.loss.size() == 5);
    CHECK_FALSE(a.model.params == init_model(cfg.model_spec(), cfg.seed).params);
    CHECK(a.model.size_histogram.size() == 6);
    CHECK(a.model.size_histogram[5] == 16);
  }
}

TEST_CASE("data loading errors") {
  RunConfig cfg = tiny_config("one_vector");
  cfg.source = DataSource::XyzDir;
  cfg.data_path = "/nonexistent/dir";
  CHECK_THROWS_AS(load_training_data(cfg), DataError);
  const fs::path dir = scratch("empty");
  cfg.data_path = dir.string();
  CHECK_THROWS_AS(load_training_data(cfg), DataError);
  const std::vector<MolecularGraph> one{oracle::ammonia()};
  write_xyz(dir / "a.xyz", one);
  CHECK(load_training_data(cfg).size() == 1);
  fs::remove_all(dir);
}

TEST_CASE("evaluate and the report table") {
  const std::vector<MolecularGraph> mols{oracle::methane(), oracle::ammonia()};
  const MetricReport r = evaluate(mols);
  CHECK(r.atom_stability == 100.0);
  CHECK(r.n_molecules == 2);
  CHECK(r.to_json()["mol_stability"] == 100.0);
  CHECK(r.table().find("100.00") != std::string::npos);
}

TEST_CASE("selftest passes and catches a corrupted Cayley table") {
  for (const SuiteResult& s : run_selftest()) {
    CAPTURE(s.name);
    CAPTURE(s.detail);
    CHECK(s.passed);
  }
  SelftestOptions bad;
  bad.corrupt_cayley = true;
  bool algebra_failed = false;
  for (const SuiteResult& s : run_selftest(bad))
    if (s.name == "algebra") algebra_failed = !s.passed;
  CHECK(algebra_failed);
}
