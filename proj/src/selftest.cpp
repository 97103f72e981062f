#include "cdm/selftest.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>

#include "cdm/clifford.hpp"
#include "cdm/diffusion.hpp"
#include "cdm/equivariant_net.hpp"

namespace cdm {

namespace {

Multivector random_mv(Rng& rng) {
  Multivector v;
  for (double& c : v.coeffs) c = rng.normal();
  return v;
}

// Basis blades as (sign, bitmask) over e1 = 1, e2 = 2, e3 = 4; e31 is -e1e3.
constexpr std::array<unsigned, kBladeCount> kMask{0, 1, 2, 4, 6, 5, 3, 7};
constexpr std::array<int, kBladeCount> kMaskSign{1, 1, 1, 1, 1, -1, 1, 1};

int reorder_sign(unsigned a, unsigned b) {
  int swaps = 0;
  for (unsigned rest = a >> 1; rest != 0; rest >>= 1) swaps += std::popcount(rest & b);
  return (swaps & 1) ? -1 : 1;
}

CayleyTable bitmask_table() {
  CayleyTable t{};
  for (std::size_t a = 0; a < kBladeCount; ++a) {
    for (std::size_t b = 0; b < kBladeCount; ++b) {
      const unsigned m = kMask[a] ^ kMask[b];
      const std::size_t c = static_cast<std::size_t>(std::find(kMask.begin(), kMask.end(), m) - kMask.begin());
      const int sign = kMaskSign[a] * kMaskSign[b] * reorder_sign(kMask[a], kMask[b]) * kMaskSign[c];
      t.entries[a][b] = {static_cast<std::uint8_t>(c), static_cast<std::int8_t>(sign)};
    }
  }
  return t;
}

CayleyTable corrupted(const CayleyTable& t) {
  CayleyTable c = t;
  c.entries[1][2].sign = static_cast<std::int8_t>(-c.entries[1][2].sign);
  return c;
}

double rel_err(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0, scale = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    diff = std::max(diff, std::abs(a[k] - b[k]));
    scale = std::max(scale, std::abs(b[k]));
  }
  return diff / std::max(scale, 1e-300);
}

SuiteResult finish(std::string name, double err, double tol, std::string detail = {}) {
  return {std::move(name), err <= tol, err, tol, std::move(detail)};
}

SuiteResult algebra_suite(const CayleyTable& table, Rng& rng) {
  double err = 0.0;
  const CayleyTable oracle = bitmask_table();
  std::size_t table_mismatch = 0;
  for (std::size_t a = 0; a < kBladeCount; ++a)
    for (std::size_t b = 0; b < kBladeCount; ++b)
      if (!(table(a, b) == oracle(a, b))) ++table_mismatch;
  if (table_mismatch) err = 1.0;

  for (int trial = 0; trial < 10000; ++trial) {
    const Multivector a = random_mv(rng), b = random_mv(rng), c = random_mv(rng);
    const double s = rng.normal();
    err = std::max(err, max_abs_diff(geometric_product(geometric_product(a, b, table), c, table),
                                     geometric_product(a, geometric_product(b, c, table), table)));
    err = std::max(err, max_abs_diff(geometric_product(a, b + c * s, table),
                                     geometric_product(a, b, table) + geometric_product(a, c, table) * s));
    for (int m = 0; m < 4; ++m) {
      const Multivector p = grade_project(a, m);
      err = std::max(err, max_abs_diff(grade_project(p, m), p));
    }
  }
  char detail[96];
  std::snprintf(detail, sizeof(detail), "%zu table entries differ from the bitmask construction", table_mismatch);
  return finish("algebra", err, 1e-12, detail);
}

SuiteResult representation_suite(const CayleyTable& table, Rng& rng) {
  double err = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const OrthogonalAction r1 = random_orthogonal(rng, trial % 2 ? -1 : 1);
    const OrthogonalAction r2 = random_orthogonal(rng, 1);
    const Multivector a = random_mv(rng), b = random_mv(rng);
    err = std::max(err, max_abs_diff((r1 * r2).apply(a), r1.apply(r2.apply(a))));
    err = std::max(err, max_abs_diff(r1.apply(geometric_product(a, b, table)),
                                     geometric_product(r1.apply(a), r1.apply(b), table)));
    for (int m = 0; m < 4; ++m) err = std::max(err, max_abs_diff(r1.apply(grade_project(a, m)), grade_project(r1.apply(a), m)));
  }
  return finish("representation", err, 1e-10);
}

NodeScalars random_scalars(std::size_t n, std::size_t f, Rng& rng) {
  NodeScalars h(n, f);
  for (double& v : h.values) v = rng.normal();
  return h;
}

MultivectorField random_field(std::size_t n, bool all_grades, Rng& rng) {
  MultivectorField x(n, 1);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t b = 0; b < kBladeCount; ++b)
      if (all_grades || kBladeGrade[b] == 1) x(i, 0, b) = rng.normal();
  return x;
}

SuiteResult equivariance_suite(Rng& rng) {
  const NetConfig cfg{2, 4, 16};
  ParamStore params;
  init_denoiser_params(params, cfg, rng);
  init_encoder_params(params, cfg, rng);
  double err = 0.0, inv = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = 3 + static_cast<std::size_t>(trial % 3) * 2;
    const GraphTopology topo = GraphTopology::fully_connected(n);
    const OrthogonalAction r = random_orthogonal(rng, trial % 2 ? -1 : 1);
    const MultivectorField z = random_field(n, true, rng);
    const NodeScalars h = random_scalars(n, kAtomFeatures, rng);
    const auto [ex, eh] = denoiser_forward(z, h, 7, 10, topo, params, cfg);
    const auto [rx, rh] = denoiser_forward(apply_orthogonal(r, z), h, 7, 10, topo, params, cfg);
    err = std::max(err, rel_err(rx.values, apply_orthogonal(r, ex).values));
    inv = std::max(inv, rel_err(rh.values, eh.values));

    std::vector<Vec3> pos(n), rpos(n);
    for (std::size_t i = 0; i < n; ++i) {
      pos[i] = {z(i, 0, 1), z(i, 0, 2), z(i, 0, 3)};
      rpos[i] = r.apply(pos[i]);
    }
    const MultivectorField lat = encoder_forward(pos, h, topo, params, cfg);
    const MultivectorField rlat = encoder_forward(rpos, h, topo, params, cfg);
    err = std::max(err, rel_err(rlat.values, apply_orthogonal(r, lat).values));
  }
  char detail[96];
  std::snprintf(detail, sizeof(detail), "scalar head invariance %.3e", inv);
  return finish("equivariance", std::max(err, inv), 1e-6, detail);
}

SuiteResult gradcheck_suite(Rng& rng) {
  double worst = 0.0;
  for (DiffusionMode mode : {DiffusionMode::OneVector, DiffusionMode::AllGrade}) {
    ModelSpec spec{mode, NetConfig{1, 2, 8}, 1, 10, ScheduleKind::Polynomial};
    DiffusionModel model = init_model(spec, rng.next_u64());
    Rng data_rng = rng.split(static_cast<std::uint64_t>(mode) + 11);
    const auto mols = synth_dataset(SynthKind::RigidShape, 1, data_rng);
    const TrainingBatch batch = make_batch(mols);
    const LossTape tape = draw_loss_tape(batch, model, data_rng);

    ParamBinding binding(model.params);
    const GradMap grads = gradients(denoising_loss(batch, tape, model, binding), binding);
    auto loss_at = [&](const ParamStore& p) {
      DiffusionModel m = model;
      m.params = p;
      ParamBinding b(m.params, false);
      return denoising_loss(batch, tape, m, b).value().data[0];
    };
    for (const auto& name : model.params.names()) {
      const std::size_t k = rng.uniform_index(model.params.get(name).size());
      ParamStore plus = model.params, minus = model.params;
      plus.get_mut(name).data[k] += 1e-5;
      minus.get_mut(name).data[k] -= 1e-5;
      const double fd = (loss_at(plus) - loss_at(minus)) / 2e-5;
      const double an = grads.at(name).data[k];
      worst = std::max(worst, std::abs(fd - an) / std::max(1.0, std::abs(an)));
    }
  }
  return finish("gradcheck", worst, 1e-4);
}

SuiteResult schedule_suite() {
  double err = 0.0;
  std::string detail;
  const NoiseSchedule explicit_betas = NoiseSchedule::from_betas({0.1, 0.2});
  err = std::max({err, std::abs(explicit_betas.alpha_bar[0] - 0.9), std::abs(explicit_betas.alpha_bar[1] - 0.72)});
  for (ScheduleKind kind : {ScheduleKind::Polynomial, ScheduleKind::Cosine}) {
    for (int T : {10, 100, 1000}) {
      const NoiseSchedule s = build_schedule(kind, T);
      for (int t = 1; t < T; ++t)
        if (!(s.alpha_bar[static_cast<std::size_t>(t)] < s.alpha_bar[static_cast<std::size_t>(t - 1)])) err = 1.0;
    }
  }
  const double end = build_schedule(ScheduleKind::Polynomial, 1000).alpha_bar.back();
  if (!(end < 1e-4)) err = 1.0;
  char buf[64];
  std::snprintf(buf, sizeof(buf), "polynomial alpha_bar_T = %.3e", end);
  return finish("schedule", err, 1e-15, buf);
}

SuiteResult forward_stats_suite(Rng& rng) {
  const int T = 100;
  const NoiseSchedule sched = build_schedule(ScheduleKind::Polynomial, T);
  const std::size_t n = 4, draws = 10000;
  DiffusionState z0{Tensor({n, 1, kBladeCount}), Tensor({n, kAtomFeatures})};
  for (double& v : z0.x.data) v = rng.normal();
  for (double& v : z0.h.data) v = rng.normal();
  z0.x = com_project_field(z0.x, {0, n});

  double worst = 0.0;  // in standard errors
  for (int t : {T / 4, T / 2, T}) {
    const double a = std::sqrt(sched.alpha_bar_at(t)), var = 1.0 - sched.alpha_bar_at(t);
    // Statistics along unit directions: single entries off grade 1, and
    // (x_i - x_j)/sqrt(2) inside the centred grade-1 subspace.
    std::vector<double> sum, sq, expect;
    auto observe = [&](const DiffusionState& z, bool first) {
      std::vector<double> obs;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t b = 0; b < kBladeCount; ++b) {
          if (kBladeGrade[b] == 1) {
            if (i + 1 < n) obs.push_back((z.x.data[i * 8 + b] - z.x.data[(i + 1) * 8 + b]) / std::sqrt(2.0));
          } else {
            obs.push_back(z.x.data[i * 8 + b]);
          }
        }
      obs.insert(obs.end(), z.h.data.begin(), z.h.data.end());
      if (first) {
        sum.assign(obs.size(), 0.0);
        sq.assign(obs.size(), 0.0);
      }
      return obs;
    };
    const std::vector<double> mean0 = observe(z0, true);
    for (std::size_t d = 0; d < draws; ++d) {
      const auto zt = forward_noise(z0, t, sched, DiffusionMode::AllGrade, rng).first;
      const auto obs = observe(zt, false);
      for (std::size_t k = 0; k < obs.size(); ++k) {
        sum[k] += obs[k];
        sq[k] += obs[k] * obs[k];
      }
    }
    const double N = static_cast<double>(draws);
    for (std::size_t k = 0; k < sum.size(); ++k) {
      const double m = sum[k] / N;
      const double v = (sq[k] - N * m * m) / (N - 1.0);
      worst = std::max(worst, std::abs(m - a * mean0[k]) / std::sqrt(var / N));
      worst = std::max(worst, std::abs(v - var) / (var * std::sqrt(2.0 / (N - 1.0))));
    }
  }
  return finish("forward_stats", worst, 4.0, "max deviation in Monte Carlo standard errors");
}

}  // namespace

std::vector<SuiteResult> run_selftest(const SelftestOptions& options) {
  const CayleyTable table = options.corrupt_cayley ? corrupted(CayleyTable::standard()) : CayleyTable::standard();
  Rng root(options.seed);
  std::vector<SuiteResult> out;
  Rng r1 = root.split(1), r2 = root.split(2), r3 = root.split(3), r4 = root.split(4), r5 = root.split(5);
  out.push_back(algebra_suite(table, r1));
  out.push_back(representation_suite(table, r2));
  out.push_back(equivariance_suite(r3));
  out.push_back(gradcheck_suite(r4));
  out.push_back(schedule_suite());
  out.push_back(forward_stats_suite(r5));
  return out;
}

}  // namespace cdm
