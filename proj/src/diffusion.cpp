#include "cdm/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "cdm/com.hpp"

namespace cdm {

namespace {

constexpr double kBetaMin = 1e-5;
constexpr double kBetaMax = 0.999;

// Betas from a closed-form alpha_bar curve, clipped, then re-accumulated so
// the stored alpha_bar is exactly the product of the stored betas.
NoiseSchedule from_alpha_bar_curve(int T, double (*curve)(double)) {
  std::vector<double> betas(static_cast<std::size_t>(T));
  double prev = curve(0.0);
  for (int t = 1; t <= T; ++t) {
    const double cur = curve(static_cast<double>(t) / T);
    const double beta = prev > 0.0 ? 1.0 - cur / prev : kBetaMax;
    betas[static_cast<std::size_t>(t - 1)] = std::clamp(beta, kBetaMin, kBetaMax);
    prev = cur;
  }
  return NoiseSchedule::from_betas(std::move(betas));
}

// Offset keeps alpha_bar_T at 1e-5 rather than 0, so the last reverse steps
// do not divide by a vanishing sqrt(1 - beta).
constexpr double kPrecision = 1e-5;

double polynomial_curve(double s) {
  const double a = 1.0 - s * s;
  return (1.0 - 2.0 * kPrecision) * a * a + kPrecision;
}

double cosine_curve(double s) {
  constexpr double kOffset = 0.008;
  const double c = std::cos((s + kOffset) / (1.0 + kOffset) * std::numbers::pi / 2.0);
  return c * c;
}

bool is_grade1_blade(std::size_t b) { return b >= 1 && b <= 3; }

void check_grade_support(const Tensor& x, DiffusionMode mode, const char* what) {
  if (x.rank() != 3 || x.shape[1] != 1 || x.shape[2] != kBladeCount) {
    throw std::invalid_argument(std::string(what) + ": expected [n, 1, 8], got " + shape_str(x.shape));
  }
  if (mode == DiffusionMode::AllGrade) return;
  for (std::size_t k = 0; k < x.size(); ++k) {
    if (!is_grade1_blade(k % kBladeCount) && x.data[k] != 0.0) {
      throw std::invalid_argument(std::string(what) +
                                  ": non-zero grade outside grade 1 in one-vector mode");
    }
  }
}

// Per-node scale factors for a packed batch.
std::vector<double> node_values(const std::vector<std::size_t>& offsets,
                                const std::vector<double>& per_molecule) {
  std::vector<double> out(offsets.back());
  for (std::size_t m = 0; m + 1 < offsets.size(); ++m)
    std::fill(out.begin() + static_cast<std::ptrdiff_t>(offsets[m]),
              out.begin() + static_cast<std::ptrdiff_t>(offsets[m + 1]), per_molecule[m]);
  return out;
}

Tensor broadcast_nodes(const std::vector<double>& per_node, std::size_t width, Shape shape) {
  Tensor out(std::move(shape));
  for (std::size_t i = 0; i < per_node.size(); ++i)
    std::fill_n(out.data.begin() + static_cast<std::ptrdiff_t>(i * width), width, per_node[i]);
  return out;
}

IndexPtr blade_index(std::size_t n, int grade) {
  Index idx;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t b = kGradeOffset[grade]; b < kGradeOffset[grade] + kGradeSize[grade]; ++b)
      idx.push_back(static_cast<std::uint32_t>(i * kBladeCount + b));
  return make_index(std::move(idx));
}

Tensor gather_values(const Tensor& t, const Index& idx) {
  Tensor out({idx.size()});
  for (std::size_t k = 0; k < idx.size(); ++k) out.data[k] = t.data[idx[k]];
  return out;
}

std::vector<std::size_t> sizes_of(std::span<const MolecularGraph> mols) {
  std::vector<std::size_t> sizes;
  for (const auto& m : mols) sizes.push_back(m.size());
  return sizes;
}

std::size_t draw_size(const std::vector<std::size_t>& histogram, Rng& rng) {
  std::size_t total = 0;
  for (std::size_t c : histogram) total += c;
  if (total == 0) throw std::invalid_argument("sample: model has an empty size histogram");
  std::size_t u = rng.uniform_index(total);
  for (std::size_t k = 0; k < histogram.size(); ++k) {
    if (u < histogram[k]) return k;
    u -= histogram[k];
  }
  return histogram.size() - 1;
}

}  // namespace

std::string_view to_string(DiffusionMode mode) {
  return mode == DiffusionMode::OneVector ? "one_vector" : "all_grade";
}

std::optional<DiffusionMode> parse_mode(std::string_view text) {
  if (text == "one_vector") return DiffusionMode::OneVector;
  if (text == "all_grade") return DiffusionMode::AllGrade;
  return std::nullopt;
}

std::string_view to_string(ScheduleKind kind) {
  return kind == ScheduleKind::Polynomial ? "polynomial" : "cosine";
}

std::optional<ScheduleKind> parse_schedule_kind(std::string_view text) {
  if (text == "polynomial") return ScheduleKind::Polynomial;
  if (text == "cosine") return ScheduleKind::Cosine;
  return std::nullopt;
}

// ---- schedule -------------------------------------------------------------------

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> betas) {
  if (betas.size() < 2) throw std::invalid_argument("noise schedule: T must be at least 2");
  NoiseSchedule s;
  s.alpha_bar.reserve(betas.size());
  double acc = 1.0;
  for (double b : betas) {
    if (!(b > 0.0 && b < 1.0)) {
      throw std::invalid_argument("noise schedule: beta " + std::to_string(b) + " outside (0, 1)");
    }
    acc *= 1.0 - b;
    s.alpha_bar.push_back(acc);
  }
  s.beta = std::move(betas);
  return s;
}

double NoiseSchedule::beta_at(int t) const {
  if (t < 1 || t > T()) throw std::out_of_range("timestep " + std::to_string(t) + " outside [1, T]");
  return beta[static_cast<std::size_t>(t - 1)];
}

double NoiseSchedule::alpha_bar_at(int t) const {
  if (t == 0) return 1.0;
  if (t < 0 || t > T()) throw std::out_of_range("timestep " + std::to_string(t) + " outside [0, T]");
  return alpha_bar[static_cast<std::size_t>(t - 1)];
}

double NoiseSchedule::posterior_variance(int t) const {
  return beta_at(t) * (1.0 - alpha_bar_at(t - 1)) / (1.0 - alpha_bar_at(t));
}

NoiseSchedule build_schedule(ScheduleKind kind, int T) {
  if (T < 2) throw std::invalid_argument("noise schedule: T must be at least 2, got " + std::to_string(T));
  return from_alpha_bar_curve(T, kind == ScheduleKind::Polynomial ? polynomial_curve : cosine_curve);
}

// ---- noise and forward process ------------------------------------------------------

NoiseSample draw_noise(std::size_t n_atoms, DiffusionMode mode, Rng& rng) {
  if (n_atoms == 0) throw std::invalid_argument("draw_noise: molecule has no atoms");
  NoiseSample s{Tensor({n_atoms, 1, kBladeCount}), Tensor({n_atoms, kAtomFeatures})};
  auto fill_grade = [&](int g) {
    for (std::size_t i = 0; i < n_atoms; ++i)
      for (std::size_t b = 0; b < kGradeSize[g]; ++b)
        s.eps_x.data[i * kBladeCount + kGradeOffset[g] + b] = rng.normal();
  };
  fill_grade(1);
  for (double& v : s.eps_h.data) v = rng.normal();
  if (mode == DiffusionMode::AllGrade) {
    fill_grade(0);
    fill_grade(2);
    fill_grade(3);
  }
  s.eps_x = com_project_field(s.eps_x, {0, n_atoms});
  return s;
}

DiffusionState concat_states(std::span<const DiffusionState> parts) {
  std::size_t n = 0;
  for (const auto& p : parts) n += p.x.shape.at(0);
  DiffusionState out{Tensor({n, 1, kBladeCount}), Tensor({n, kAtomFeatures})};
  out.x.data.clear();
  out.h.data.clear();
  for (const auto& p : parts) {
    out.x.data.insert(out.x.data.end(), p.x.data.begin(), p.x.data.end());
    out.h.data.insert(out.h.data.end(), p.h.data.begin(), p.h.data.end());
  }
  return out;
}

NoiseSample concat_noise(std::span<const NoiseSample> parts) {
  std::vector<DiffusionState> states;
  states.reserve(parts.size());
  for (const auto& p : parts) states.push_back({p.eps_x, p.eps_h});
  DiffusionState s = concat_states(states);
  return {std::move(s.x), std::move(s.h)};
}

DiffusionState forward_noise(const DiffusionState& z0, int t, const NoiseSchedule& sched,
                             DiffusionMode mode, const NoiseSample& eps) {
  check_grade_support(z0.x, mode, "forward_noise z0");
  check_grade_support(eps.eps_x, mode, "forward_noise eps");
  if (eps.eps_x.shape != z0.x.shape || eps.eps_h.shape != z0.h.shape) {
    throw std::invalid_argument("forward_noise: noise shapes " + shape_str(eps.eps_x.shape) + " / " +
                                shape_str(eps.eps_h.shape) + " differ from state " +
                                shape_str(z0.x.shape) + " / " + shape_str(z0.h.shape));
  }
  if (t < 1 || t > sched.T()) throw std::out_of_range("forward_noise: timestep outside [1, T]");
  const double a = std::sqrt(sched.alpha_bar_at(t));
  const double s = std::sqrt(1.0 - sched.alpha_bar_at(t));
  DiffusionState out = z0;
  for (std::size_t k = 0; k < out.x.size(); ++k) out.x.data[k] = a * z0.x.data[k] + s * eps.eps_x.data[k];
  for (std::size_t k = 0; k < out.h.size(); ++k) out.h.data[k] = a * z0.h.data[k] + s * eps.eps_h.data[k];
  return out;
}

std::pair<DiffusionState, NoiseSample> forward_noise(const DiffusionState& z0, int t,
                                                     const NoiseSchedule& sched,
                                                     DiffusionMode mode, Rng& rng) {
  NoiseSample eps = draw_noise(z0.x.shape.at(0), mode, rng);
  DiffusionState zt = forward_noise(z0, t, sched, mode, eps);
  return {std::move(zt), std::move(eps)};
}

Tensor forward_noise_grade(const Tensor& x0, const Tensor& eps_x, int t, const NoiseSchedule& sched,
                           int grade) {
  if (grade < 0 || grade >= static_cast<int>(kGradeCount)) throw std::out_of_range("grade outside 0..3");
  if (x0.shape != eps_x.shape) throw std::invalid_argument("forward_noise_grade: shape mismatch");
  const double a = std::sqrt(sched.alpha_bar_at(t));
  const double s = std::sqrt(1.0 - sched.alpha_bar_at(t));
  Tensor out = x0;
  for (std::size_t k = 0; k < out.size(); ++k) {
    if (kBladeGrade[k % kBladeCount] == grade) out.data[k] = a * x0.data[k] + s * eps_x.data[k];
  }
  return out;
}

Tensor com_project_field(const Tensor& x, const std::vector<std::size_t>& offsets) {
  Tensor out = x;
  for (std::size_t m = 0; m + 1 < offsets.size(); ++m) {
    const std::size_t lo = offsets[m], hi = offsets[m + 1];
    if (hi <= lo) throw std::invalid_argument("com_project: empty molecule");
    for (std::size_t b = 1; b <= 3; ++b) {
      double mean = 0.0;
      for (std::size_t i = lo; i < hi; ++i) mean += x.data[i * kBladeCount + b];
      mean /= static_cast<double>(hi - lo);
      for (std::size_t i = lo; i < hi; ++i) out.data[i * kBladeCount + b] -= mean;
    }
  }
  return out;
}

// ---- features -------------------------------------------------------------------------

Tensor encode_features(const MolecularGraph& mol) {
  Tensor h({mol.size(), kAtomFeatures});
  for (std::size_t i = 0; i < mol.size(); ++i) {
    h.data[i * kAtomFeatures + static_cast<std::size_t>(mol.atom_types[i])] = kOneHotScale;
    h.data[i * kAtomFeatures + kElementCount] = kChargeScale * mol.charges[i];
  }
  return h;
}

void decode_features(const Tensor& h, std::vector<Element>& types, std::vector<int>& charges) {
  if (h.rank() != 2 || h.shape[1] != kAtomFeatures) {
    throw std::invalid_argument("decode_features: expected [n, 6], got " + shape_str(h.shape));
  }
  types.clear();
  charges.clear();
  for (std::size_t i = 0; i < h.shape[0]; ++i) {
    const double* row = h.data.data() + i * kAtomFeatures;
    const std::size_t best = static_cast<std::size_t>(std::max_element(row, row + kElementCount) - row);
    types.push_back(static_cast<Element>(best));
    charges.push_back(static_cast<int>(std::lround(row[kElementCount] / kChargeScale)));
  }
}

// ---- model -----------------------------------------------------------------------------

DiffusionModel init_model(const ModelSpec& spec, std::uint64_t seed) {
  DiffusionModel model;
  model.spec = spec;
  model.schedule = build_schedule(spec.schedule, spec.timesteps);
  Rng rng(seed);
  init_denoiser_params(model.params, spec.net, rng);
  if (spec.mode == DiffusionMode::AllGrade) init_encoder_params(model.params, spec.encoder_net(), rng);
  return model;
}

void validate_model(const DiffusionModel& model) {
  const DiffusionModel fresh = init_model(model.spec, 0);
  if (model.schedule.T() != model.spec.timesteps) {
    throw std::invalid_argument("model: schedule length " + std::to_string(model.schedule.T()) +
                                " differs from timesteps " + std::to_string(model.spec.timesteps));
  }
  if (fresh.params.names() != model.params.names()) {
    throw std::invalid_argument("model: parameter names do not match a " +
                                std::string(to_string(model.spec.mode)) + " network of this size");
  }
  for (const auto& name : fresh.params.names()) {
    const Tensor& p = model.params.get(name);
    if (p.shape != fresh.params.get(name).shape) {
      throw std::invalid_argument("model: parameter " + name + " has shape " + shape_str(p.shape) +
                                  ", expected " + shape_str(fresh.params.get(name).shape));
    }
    if (!p.all_finite()) throw std::invalid_argument("model: parameter " + name + " is not finite");
  }
}

TrainingBatch make_batch(std::span<const MolecularGraph> molecules) {
  if (molecules.empty()) throw std::invalid_argument("make_batch: no molecules");
  TrainingBatch batch;
  batch.layout = BatchLayout::for_sizes(sizes_of(molecules));
  const std::size_t n = batch.layout.n_nodes();
  batch.positions = Tensor({n, 3});
  batch.h = Tensor({n, kAtomFeatures});
  std::size_t row = 0;
  for (const MolecularGraph& mol : molecules) {
    mol.validate();
    const auto centred = com_project(mol.positions);
    const Tensor h = encode_features(mol);
    std::copy(h.data.begin(), h.data.end(), batch.h.data.begin() + static_cast<std::ptrdiff_t>(row * kAtomFeatures));
    for (const Vec3& p : centred) {
      for (std::size_t k = 0; k < 3; ++k) batch.positions.data[row * 3 + k] = p[k];
      ++row;
    }
  }
  return batch;
}

LossTape draw_loss_tape(const TrainingBatch& batch, const DiffusionModel& model, Rng& rng) {
  LossTape tape;
  std::vector<NoiseSample> parts;
  const auto& off = batch.layout.offsets;
  for (std::size_t m = 0; m + 1 < off.size(); ++m) {
    tape.t.push_back(1 + static_cast<int>(rng.uniform_index(static_cast<std::size_t>(model.schedule.T()))));
    parts.push_back(draw_noise(off[m + 1] - off[m], model.spec.mode, rng));
  }
  tape.noise = concat_noise(parts);
  return tape;
}

Var clean_latent(const TrainingBatch& batch, const DiffusionModel& model, ParamBinding& params) {
  if (model.spec.mode == DiffusionMode::AllGrade) {
    return encoder_forward(batch.positions, constant(batch.h), batch.layout, params,
                           model.spec.encoder_net());
  }
  const std::size_t n = batch.layout.n_nodes();
  Tensor x({n, 1, kBladeCount});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < 3; ++k) x.data[i * kBladeCount + 1 + k] = batch.positions.data[i * 3 + k];
  return constant(std::move(x));
}

Var denoising_loss(const TrainingBatch& batch, const LossTape& tape, const DiffusionModel& model,
                   ParamBinding& params) {
  const auto& layout = batch.layout;
  const std::size_t n = layout.n_nodes();
  const DiffusionMode mode = model.spec.mode;
  if (tape.t.size() != layout.n_molecules()) {
    throw std::invalid_argument("denoising_loss: tape has " + std::to_string(tape.t.size()) +
                                " timesteps for " + std::to_string(layout.n_molecules()) + " molecules");
  }
  if (tape.noise.eps_x.shape != Shape{n, 1, kBladeCount} || tape.noise.eps_h.shape != Shape{n, kAtomFeatures}) {
    throw std::invalid_argument("denoising_loss: noise shapes do not match the batch");
  }
  check_grade_support(tape.noise.eps_x, mode, "denoising_loss noise");

  std::vector<double> a_mol, s_mol, t_frac;
  for (int t : tape.t) {
    if (t < 1 || t > model.schedule.T()) throw std::out_of_range("denoising_loss: timestep outside [1, T]");
    const double ab = model.schedule.alpha_bar_at(t);
    a_mol.push_back(std::sqrt(ab));
    s_mol.push_back(std::sqrt(1.0 - ab));
    t_frac.push_back(static_cast<double>(t) / model.schedule.T());
  }
  const auto a_node = node_values(layout.offsets, a_mol);
  const auto s_node = node_values(layout.offsets, s_mol);

  Var z0 = clean_latent(batch, model, params);
  Tensor noise_x = broadcast_nodes(s_node, kBladeCount, {n, 1, kBladeCount});
  for (std::size_t k = 0; k < noise_x.size(); ++k) noise_x.data[k] *= tape.noise.eps_x.data[k];
  Var z_t = z0 * constant(broadcast_nodes(a_node, kBladeCount, {n, 1, kBladeCount})) + constant(std::move(noise_x));

  Tensor h_t({n, kAtomFeatures});
  for (std::size_t k = 0; k < h_t.size(); ++k) {
    const std::size_t i = k / kAtomFeatures;
    h_t.data[k] = a_node[i] * batch.h.data[k] + s_node[i] * tape.noise.eps_h.data[k];
  }

  DenoiserOutput out = denoiser_forward(z_t, constant(std::move(h_t)), t_frac, layout, params, model.spec.net);

  std::vector<Var> blocks;
  for (int g = 0; g < static_cast<int>(kGradeCount); ++g) {
    if (mode == DiffusionMode::OneVector && g != 1) continue;
    IndexPtr idx = blade_index(n, g);
    Var pred = gather(out.eps_x, idx, {idx->size()});
    blocks.push_back(mse(pred, constant(gather_values(tape.noise.eps_x, *idx))));
  }
  blocks.push_back(mse(out.eps_h, constant(tape.noise.eps_h)));
  Var total = blocks.front();
  for (std::size_t b = 1; b < blocks.size(); ++b) total = total + blocks[b];
  return scale(total, 1.0 / static_cast<double>(blocks.size()));
}

// ---- reverse process ---------------------------------------------------------------------

DiffusionState reverse_step(const DiffusionState& z_t, const NoiseSample& eps_hat, const NoiseSample& noise,
                            int t, const NoiseSchedule& sched, DiffusionMode mode,
                            const std::vector<std::size_t>& offsets) {
  if (eps_hat.eps_x.shape != z_t.x.shape || noise.eps_x.shape != z_t.x.shape ||
      eps_hat.eps_h.shape != z_t.h.shape || noise.eps_h.shape != z_t.h.shape) {
    throw std::invalid_argument("reverse_step: state, prediction and noise shapes differ");
  }
  const double beta = sched.beta_at(t);
  const double inv_sqrt_alpha = 1.0 / std::sqrt(1.0 - beta);
  const double eps_coef = beta / std::sqrt(1.0 - sched.alpha_bar_at(t));
  const double sigma = std::sqrt(sched.posterior_variance(t));

  DiffusionState out = z_t;
  for (std::size_t k = 0; k < out.x.size(); ++k) {
    if (mode == DiffusionMode::OneVector && !is_grade1_blade(k % kBladeCount)) {
      out.x.data[k] = 0.0;
      continue;
    }
    out.x.data[k] = inv_sqrt_alpha * (z_t.x.data[k] - eps_coef * eps_hat.eps_x.data[k]) + sigma * noise.eps_x.data[k];
  }
  for (std::size_t k = 0; k < out.h.size(); ++k) {
    out.h.data[k] = inv_sqrt_alpha * (z_t.h.data[k] - eps_coef * eps_hat.eps_h.data[k]) + sigma * noise.eps_h.data[k];
  }
  out.x = com_project_field(out.x, offsets);
  return out;
}

std::vector<MolecularGraph> sample(const DiffusionModel& model, std::size_t n_molecules,
                                   const SampleOptions& options) {
  if (n_molecules == 0) throw std::invalid_argument("sample: number of molecules must be positive");
  validate_model(model);
  const DiffusionMode mode = model.spec.mode;
  const int T = model.schedule.T();
  Rng master(options.seed);

  std::vector<std::size_t> sizes = options.n_atoms;
  if (options.replay) {
    if (options.replay->sizes.size() != n_molecules || options.replay->draws.size() != n_molecules) {
      throw std::invalid_argument("sample: noise tape holds a different number of molecules");
    }
    sizes = options.replay->sizes;
  } else if (sizes.empty()) {
    for (std::size_t m = 0; m < n_molecules; ++m) sizes.push_back(draw_size(model.size_histogram, master));
  }
  if (sizes.size() != n_molecules) throw std::invalid_argument("sample: one atom count per molecule required");
  for (std::size_t s : sizes)
    if (s == 0) throw std::invalid_argument("sample: molecules need at least one atom");

  if (options.record) {
    options.record->seed = options.seed;
    options.record->sizes = sizes;
    options.record->draws.assign(n_molecules, {});
  }

  std::vector<MolecularGraph> result;
  result.reserve(n_molecules);
  const std::size_t chunk = std::max<std::size_t>(1, options.chunk);
  ParamBinding binding(model.params, /*requires_grad=*/false);

  for (std::size_t first = 0; first < n_molecules; first += chunk) {
    const std::size_t last = std::min(n_molecules, first + chunk);
    const std::vector<std::size_t> chunk_sizes(sizes.begin() + static_cast<std::ptrdiff_t>(first),
                                               sizes.begin() + static_cast<std::ptrdiff_t>(last));
    const BatchLayout layout = BatchLayout::for_sizes(chunk_sizes);
    std::vector<Rng> streams;
    for (std::size_t m = first; m < last; ++m) streams.push_back(master.split(m + 1));

    auto next_noise = [&](std::size_t k) {
      std::vector<NoiseSample> parts;
      for (std::size_t m = first; m < last; ++m) {
        NoiseSample s = options.replay ? options.replay->draws[m].at(k)
                                       : draw_noise(sizes[m], mode, streams[m - first]);
        if (options.record) options.record->draws[m].push_back(s);
        parts.push_back(std::move(s));
      }
      return concat_noise(parts);
    };

    NoiseSample init = next_noise(0);
    check_grade_support(init.eps_x, mode, "sample initial noise");
    DiffusionState z{com_project_field(init.eps_x, layout.offsets), init.eps_h};

    for (int t = T; t >= 1; --t) {
      const std::vector<double> t_frac(chunk_sizes.size(), static_cast<double>(t) / T);
      DenoiserOutput pred = denoiser_forward(constant(z.x), constant(z.h), t_frac, layout, binding, model.spec.net);
      NoiseSample eps_hat{pred.eps_x.value(), pred.eps_h.value()};
      NoiseSample noise = next_noise(static_cast<std::size_t>(T - t + 1));
      z = reverse_step(z, eps_hat, noise, t, model.schedule, mode, layout.offsets);
    }
    if (!z.x.all_finite() || !z.h.all_finite()) {
      throw std::runtime_error("sample: reverse chain produced non-finite values");
    }

    std::vector<Element> types;
    std::vector<int> charges;
    decode_features(z.h, types, charges);
    for (std::size_t m = 0; m < chunk_sizes.size(); ++m) {
      MolecularGraph mol;
      for (std::size_t i = layout.offsets[m]; i < layout.offsets[m + 1]; ++i) {
        mol.positions.push_back({z.x.data[i * kBladeCount + 1], z.x.data[i * kBladeCount + 2],
                                 z.x.data[i * kBladeCount + 3]});
        mol.atom_types.push_back(types[i]);
        mol.charges.push_back(charges[i]);
      }
      mol.positions = com_project(mol.positions);
      result.push_back(std::move(mol));
    }
  }
  return result;
}

}  // namespace cdm
