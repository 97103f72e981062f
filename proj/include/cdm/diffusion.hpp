#pragma once

// DDPM over Clifford multivectors. One-vector mode diffuses only the grade-1
// slice (atom positions) plus the atom features; all-grade mode diffuses a
// latent produced by the encoder in every grade, each grade with its own
// independent noise under one shared schedule.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "cdm/autodiff.hpp"
#include "cdm/equivariant_net.hpp"
#include "cdm/moldata.hpp"
#include "cdm/rng.hpp"

namespace cdm {

enum class DiffusionMode { OneVector, AllGrade };
std::string_view to_string(DiffusionMode mode);
std::optional<DiffusionMode> parse_mode(std::string_view text);

enum class ScheduleKind { Polynomial, Cosine };
std::string_view to_string(ScheduleKind kind);
std::optional<ScheduleKind> parse_schedule_kind(std::string_view text);

/// beta[t-1] and alpha_bar[t-1] for t = 1..T.
struct NoiseSchedule {
  std::vector<double> beta;
  std::vector<double> alpha_bar;

  /// Cumulative products of (1 - beta). Throws std::invalid_argument unless
  /// every beta lies in (0, 1) and there are at least 2 of them.
  static NoiseSchedule from_betas(std::vector<double> betas);

  int T() const { return static_cast<int>(beta.size()); }
  double beta_at(int t) const;
  /// alpha_bar at t; t = 0 gives 1.
  double alpha_bar_at(int t) const;
  /// beta_t (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t).
  double posterior_variance(int t) const;
};

/// Throws std::invalid_argument for T < 2.
NoiseSchedule build_schedule(ScheduleKind kind, int T);

/// One molecule (or a packed batch) in diffusion space.
struct DiffusionState {
  Tensor x;  ///< [n, 1, 8]
  Tensor h;  ///< [n, kAtomFeatures]
};

/// Standard normal draws; the grade-1 slice is centred per molecule.
struct NoiseSample {
  Tensor eps_x;  ///< [n, 1, 8]; grades 0, 2, 3 are zero in one-vector mode
  Tensor eps_h;  ///< [n, kAtomFeatures]
};

/// Draw order: grade 1, h, then grades 0, 2, 3. The one-vector draws are
/// therefore a prefix of the all-grade draws from the same stream.
NoiseSample draw_noise(std::size_t n_atoms, DiffusionMode mode, Rng& rng);

/// Concatenates per-molecule states or noise along the node axis.
DiffusionState concat_states(std::span<const DiffusionState> parts);
NoiseSample concat_noise(std::span<const NoiseSample> parts);

/// z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps on every coefficient and
/// on h. Throws std::invalid_argument if z0 or eps carries grades outside
/// the mode's support, std::out_of_range unless 1 <= t <= T.
DiffusionState forward_noise(const DiffusionState& z0, int t, const NoiseSchedule& sched,
                             DiffusionMode mode, const NoiseSample& eps);
std::pair<DiffusionState, NoiseSample> forward_noise(const DiffusionState& z0, int t,
                                                     const NoiseSchedule& sched,
                                                     DiffusionMode mode, Rng& rng);
/// Corrupts only the grade-m slice of x, leaving every other entry of z0.
Tensor forward_noise_grade(const Tensor& x0, const Tensor& eps_x, int t,
                           const NoiseSchedule& sched, int grade);

/// Centre of mass removal on an [n, 1, 8] field's grade-1 slice, per
/// molecule. Throws std::invalid_argument for an empty molecule.
Tensor com_project_field(const Tensor& x, const std::vector<std::size_t>& offsets);

/// EDM-style scaling: one-hot * 0.25, charge * 0.1.
inline constexpr double kOneHotScale = 0.25;
inline constexpr double kChargeScale = 0.1;
Tensor encode_features(const MolecularGraph& mol);
/// Argmax over the one-hot block and rounded charge, per node.
void decode_features(const Tensor& h, std::vector<Element>& types, std::vector<int>& charges);

struct ModelSpec {
  DiffusionMode mode = DiffusionMode::OneVector;
  NetConfig net;
  std::size_t encoder_layers = 2;
  int timesteps = 1000;
  ScheduleKind schedule = ScheduleKind::Polynomial;

  NetConfig encoder_net() const { return {encoder_layers, net.mv_channels, net.scalar_hidden}; }
};

struct DiffusionModel {
  ModelSpec spec;
  NoiseSchedule schedule;
  ParamStore params;
  /// size_histogram[k] = number of training molecules with k atoms.
  std::vector<std::size_t> size_histogram;
};

/// Fresh parameters (denoiser, plus encoder in all-grade mode).
DiffusionModel init_model(const ModelSpec& spec, std::uint64_t seed);
/// Throws std::invalid_argument when the parameter names or shapes differ
/// from a fresh initialisation of the same spec.
void validate_model(const DiffusionModel& model);

/// Molecules packed into a single graph; positions are centred per molecule.
struct TrainingBatch {
  BatchLayout layout;
  Tensor positions;  ///< [N, 3]
  Tensor h;          ///< [N, kAtomFeatures]
};
TrainingBatch make_batch(std::span<const MolecularGraph> molecules);

/// The random part of one loss evaluation: a timestep per molecule and the
/// concatenated noise. Replaying a tape makes the loss a pure function.
struct LossTape {
  std::vector<int> t;
  NoiseSample noise;
};
LossTape draw_loss_tape(const TrainingBatch& batch, const DiffusionModel& model, Rng& rng);

/// Clean diffusion-space state: the embedded positions in one-vector mode,
/// the encoder latent in all-grade mode.
Var clean_latent(const TrainingBatch& batch, const DiffusionModel& model, ParamBinding& params);

/// Mean over blocks of per-block mean squared error between predicted and
/// true noise. Blocks are the active grades (grade 1, or all four) and h.
Var denoising_loss(const TrainingBatch& batch, const LossTape& tape, const DiffusionModel& model,
                   ParamBinding& params);

/// One ancestral step z_t -> z_{t-1} given the predicted noise and a fresh
/// draw. Pure and linear in (z_t, eps_hat, noise).
DiffusionState reverse_step(const DiffusionState& z_t, const NoiseSample& eps_hat,
                            const NoiseSample& noise, int t, const NoiseSchedule& sched,
                            DiffusionMode mode, const std::vector<std::size_t>& offsets);

/// Every random draw of a sampling run. draws[m][0] initialises molecule m;
/// draws[m][k] for k >= 1 is the noise of reverse step t = T - k + 1.
struct NoiseTape {
  std::uint64_t seed = 0;
  std::vector<std::size_t> sizes;
  std::vector<std::vector<NoiseSample>> draws;
};

struct SampleOptions {
  std::uint64_t seed = 0;
  /// Explicit atom counts; drawn from the model's size histogram if empty.
  std::vector<std::size_t> n_atoms;
  /// Molecules denoised together per network call.
  std::size_t chunk = 64;
  NoiseTape* record = nullptr;
  const NoiseTape* replay = nullptr;
};

/// Runs the reverse chain from Gaussian noise and reads out positions from
/// the grade-1 slice and atom types from h. Throws std::invalid_argument for
/// n_molecules == 0 or a parameter set that does not match the spec.
std::vector<MolecularGraph> sample(const DiffusionModel& model, std::size_t n_molecules,
                                   const SampleOptions& options);

}  // namespace cdm
