#include "cdm/pipeline.hpp"

#include <cstdio>
#include <filesystem>

namespace cdm {

std::vector<MolecularGraph> load_training_data(const RunConfig& cfg) {
  if (cfg.source == DataSource::Synth) {
    Rng rng = Rng(cfg.seed).split(0xda7a);
    return synth_dataset(cfg.kind, cfg.n_samples, rng);
  }
  const std::filesystem::path dir(cfg.data_path);
  if (!std::filesystem::is_directory(dir)) throw DataError("data directory not found: " + cfg.data_path);
  std::vector<MolecularGraph> mols;
  try {
    mols = load_xyz_dir(dir);
  } catch (const std::runtime_error& e) {
    throw DataError(e.what());
  }
  if (mols.empty()) throw DataError("no molecules found in " + cfg.data_path);
  if (mols.size() > cfg.n_samples) mols.resize(cfg.n_samples);
  return mols;
}

std::vector<double> smooth_losses(const std::vector<double>& losses, std::size_t window) {
  std::vector<double> out(losses.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < losses.size(); ++i) {
    acc += losses[i];
    if (i >= window) acc -= losses[i - window];
    out[i] = acc / static_cast<double>(std::min(i + 1, window));
  }
  return out;
}

TrainResult train_model(const RunConfig& cfg, std::span<const MolecularGraph> data,
                        const TrainProgress& progress) {
  if (data.empty()) throw DataError("training set is empty");
  TrainResult result;
  result.model = init_model(cfg.model_spec(), cfg.seed);
  for (const auto& mol : data) {
    mol.validate();
    if (result.model.size_histogram.size() <= mol.size()) result.model.size_histogram.resize(mol.size() + 1, 0);
    ++result.model.size_histogram[mol.size()];
  }

  Rng rng = Rng(cfg.seed).split(0x7a1);
  AdamState state;
  const AdamConfig adam{cfg.lr};
  std::vector<MolecularGraph> picked(cfg.batch_size);
  result.loss.reserve(cfg.steps);
  ParamStore average = result.model.params;
  double window_sum = 0.0;
  constexpr std::size_t kWindow = 50;

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    for (auto& slot : picked) slot = data[rng.uniform_index(data.size())];
    const TrainingBatch batch = make_batch(picked);
    const LossTape tape = draw_loss_tape(batch, result.model, rng);
    ParamBinding binding(result.model.params);
    const Var loss = denoising_loss(batch, tape, result.model, binding);
    const GradMap grads = gradients(loss, binding);
    result.model.params = adam_step(result.model.params, grads, state, adam);
    // Warm-up keeps short runs from being dominated by the initialisation.
    const double decay = std::min(cfg.ema_decay, (1.0 + step) / (10.0 + step));
    for (const auto& name : average.names()) {
      auto& avg = average.get_mut(name).data;
      const auto& cur = result.model.params.get(name).data;
      for (std::size_t k = 0; k < avg.size(); ++k) avg[k] = decay * avg[k] + (1.0 - decay) * cur[k];
    }

    const double value = loss.value().data[0];
    result.loss.push_back(value);
    window_sum += value;
    if (result.loss.size() > kWindow) window_sum -= result.loss[result.loss.size() - 1 - kWindow];
    if (progress) progress(step, value, window_sum / static_cast<double>(std::min(result.loss.size(), kWindow)));
  }
  result.smoothed = smooth_losses(result.loss, kWindow);
  result.model.params = std::move(average);
  return result;
}

nlohmann::json MetricReport::to_json() const {
  return {{"atom_stability", atom_stability},
          {"mol_stability", mol_stability},
          {"validity", validity},
          {"valid_unique", valid_unique},
          {"n_molecules", n_molecules}};
}

std::string MetricReport::table() const {
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "%-8s %10s %10s %10s %14s\n%-8s %10.2f %10.2f %10.2f %14.2f\n", "# Metrics", "Atom sta%",
                "Mol sta%", "Valid%", "Valid&Unique%", "samples", atom_stability, mol_stability, validity,
                valid_unique);
  return buf;
}

MetricReport evaluate(std::span<const MolecularGraph> samples, const ValencyTable& table) {
  MetricReport r;
  r.n_molecules = samples.size();
  r.atom_stability = atom_stability(samples, table);
  r.mol_stability = molecule_stability(samples, table);
  const ValidityReport v = validity_and_uniqueness(samples, table);
  r.validity = v.valid;
  r.valid_unique = v.valid_unique;
  return r;
}

std::string loss_csv(const std::vector<double>& loss, const std::vector<double>& smoothed) {
  std::string out = "step,loss,smoothed_loss\n";
  char buf[96];
  for (std::size_t i = 0; i < loss.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g\n", i, loss[i], smoothed.at(i));
    out += buf;
  }
  return out;
}

}  // namespace cdm
