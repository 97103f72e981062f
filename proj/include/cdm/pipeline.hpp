#pragma once

// Training loop, data loading and the metric report used by the CLI.

#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "cdm/config.hpp"
#include "cdm/diffusion.hpp"
#include "cdm/moldata.hpp"
#include "json.hpp"

namespace cdm {

/// Raised when the configured data source is missing or yields no molecules.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<MolecularGraph> load_training_data(const RunConfig& cfg);

/// Trailing mean over the last `window` values (fewer at the start).
std::vector<double> smooth_losses(const std::vector<double>& losses, std::size_t window = 50);

struct TrainResult {
  DiffusionModel model;
  std::vector<double> loss;
  std::vector<double> smoothed;
};

using TrainProgress = std::function<void(std::size_t step, double loss, double smoothed)>;

/// Adam on the denoising loss with uniformly drawn mini-batches. The
/// returned model holds the exponential moving average of the iterates.
/// Fully determined by (cfg, data).
TrainResult train_model(const RunConfig& cfg, std::span<const MolecularGraph> data,
                        const TrainProgress& progress = {});

struct MetricReport {
  double atom_stability = 0.0;
  double mol_stability = 0.0;
  double validity = 0.0;
  double valid_unique = 0.0;
  std::size_t n_molecules = 0;

  nlohmann::json to_json() const;
  /// Fixed-width rows: atom stability, molecule stability, validity, V×U.
  std::string table() const;
};

MetricReport evaluate(std::span<const MolecularGraph> samples,
                      const ValencyTable& table = ValencyTable::defaults());

std::string loss_csv(const std::vector<double>& loss, const std::vector<double>& smoothed);

}  // namespace cdm
