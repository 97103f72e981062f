#include "doctest.h"

#include <numeric>

#include "cdm/diffusion.hpp"
#include "cdm/equivariant_net.hpp"
#include "oracles.hpp"

using namespace cdm;

namespace {

MultivectorField random_field(std::size_t n, std::size_t c, Rng& rng, bool grade1_only = false) {
  MultivectorField f(n, c);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t b = 0; b < kBladeCount; ++b)
        if (!grade1_only || kBladeGrade[b] == 1) f(i, ch, b) = rng.normal();
  return f;
}

NodeScalars random_scalars(std::size_t n, std::size_t f, Rng& rng) {
  NodeScalars h(n, f);
  for (double& v : h.values) v = rng.normal();
  return h;
}

Tensor random_tensor(Shape s, Rng& rng) {
  Tensor t(std::move(s));
  for (double& v : t.data) v = rng.normal();
  return t;
}

MultivectorField centred(MultivectorField f) {
  for (std::size_t b = 1; b <= 3; ++b) {
    double mean = 0.0;
    for (std::size_t i = 0; i < f.n_nodes; ++i) mean += f(i, 0, b);
    mean /= static_cast<double>(f.n_nodes);
    for (std::size_t i = 0; i < f.n_nodes; ++i) f(i, 0, b) -= mean;
  }
  return f;
}

}  // namespace

TEST_CASE("grade_linear examples") {
  Rng rng(1);
  const MultivectorField x = random_field(3, 2, rng);
  Tensor eye({4, 2, 2});
  for (int g = 0; g < 4; ++g)
    for (int i = 0; i < 2; ++i) eye.data[(g * 2 + i) * 2 + i] = 1.0;
  CHECK(grade_linear(x, eye) == x);

  MultivectorField one(1, 1);
  one.set(0, 0, Multivector::scalar(1) + Multivector::blade(1) + Multivector::blade(6) + Multivector::blade(7));
  const MultivectorField out = grade_linear(one, Tensor({4, 1, 1}, std::vector<double>{2, 3, 4, 5}));
  Multivector want = Multivector::scalar(2) + Multivector::blade(1, 3) + Multivector::blade(6, 4) + Multivector::blade(7, 5);
  CHECK(out.at(0, 0) == want);

  CHECK_THROWS_AS(grade_linear(x, Tensor({4, 3, 2})), std::invalid_argument);
}

TEST_CASE("grade_linear preserves grade support and commutes with O(3)") {
  Rng rng(2);
  double err = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const MultivectorField x = random_field(4, 3, rng);
    const Tensor w = random_tensor({4, 3, 5}, rng);
    const OrthogonalAction r = random_orthogonal(rng, trial % 2 ? -1 : 1);
    err = std::max(err, oracle::rel_err(grade_linear(apply_orthogonal(r, x), w).values,
                                        apply_orthogonal(r, grade_linear(x, w)).values));
  }
  CHECK(err <= 1e-10);

  const MultivectorField v = random_field(4, 3, rng, /*grade1_only=*/true);
  const MultivectorField out = grade_linear(v, random_tensor({4, 3, 2}, rng));
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t b = 0; b < 8; ++b)
        if (kBladeGrade[b] != 1) CHECK(out(i, c, b) == 0.0);
}

TEST_CASE("geometric_product_layer examples") {
  Rng rng(3);
  const MultivectorField x = random_field(2, 2, rng), y = random_field(2, 2, rng);
  CHECK(geometric_product_layer(x, y, Tensor({4, 4, 4, 2})) == MultivectorField(2, 2));

  MultivectorField e1(1, 1);
  e1.set(0, 0, Multivector::blade(1));
  CHECK(geometric_product_layer(e1, e1, Tensor({4, 4, 4, 1}, 1.0)).at(0, 0) == Multivector::scalar(1));

  CHECK_THROWS_AS(geometric_product_layer(x, y, Tensor({4, 4, 4, 3})), std::invalid_argument);
  CHECK_THROWS_AS(geometric_product_layer(x, random_field(2, 3, rng), Tensor({4, 4, 4, 2})), std::invalid_argument);
}

TEST_CASE("geometric_product_layer matches the oracle and is O(3)-equivariant") {
  Rng rng(4);
  double oracle_err = 0.0, equi = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t c = 3;
    const MultivectorField x = random_field(2, c, rng), y = random_field(2, c, rng);
    const Tensor mix = random_tensor({4, 4, 4, c}, rng);
    const MultivectorField out = geometric_product_layer(x, y, mix);

    MultivectorField want(2, c);
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t ch = 0; ch < c; ++ch) {
        Multivector acc;
        for (int i = 0; i < 4; ++i)
          for (int j = 0; j < 4; ++j) {
            const Multivector p = oracle::product(grade_project(x.at(n, ch), i), grade_project(y.at(n, ch), j));
            for (int k = 0; k < 4; ++k) acc += grade_project(p, k) * mix.data[((i * 4 + j) * 4 + k) * c + ch];
          }
        want.set(n, ch, acc);
      }
    oracle_err = std::max(oracle_err, oracle::rel_err(out.values, want.values));

    const OrthogonalAction r = random_orthogonal(rng, trial % 2 ? -1 : 1);
    equi = std::max(equi, oracle::rel_err(geometric_product_layer(apply_orthogonal(r, x), apply_orthogonal(r, y), mix).values,
                                          apply_orthogonal(r, out).values));
  }
  CHECK(oracle_err <= 1e-12);
  CHECK(equi <= 1e-10);
}

TEST_CASE("multivector_norm_features") {
  MultivectorField x(1, 1);
  x.set(0, 0, Multivector::blade(1, 3.0));
  CHECK(multivector_norm_features(x).data == std::vector<double>{0, 3, 0, 0});
  CHECK(multivector_norm_features(MultivectorField(2, 3)).data == std::vector<double>(24, 0.0));

  Rng rng(5);
  double err = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const MultivectorField f = random_field(3, 2, rng);
    const OrthogonalAction r = random_orthogonal(rng, trial % 2 ? -1 : 1);
    err = std::max(err, oracle::max_abs_diff(multivector_norm_features(apply_orthogonal(r, f)).data,
                                             multivector_norm_features(f).data));
  }
  CHECK(err <= 1e-10);
}

TEST_CASE("graph topology validation") {
  using E = GraphTopology::Edge;
  CHECK_THROWS_AS(GraphTopology(2, {E{0, 0}}), std::invalid_argument);
  CHECK_THROWS_AS(GraphTopology(2, {E{0, 2}, E{2, 0}}), std::invalid_argument);
  CHECK_THROWS_AS(GraphTopology(3, {E{0, 1}}), std::invalid_argument);
  const GraphTopology full = GraphTopology::fully_connected(4);
  CHECK(full.n_edges() == 12);
  for (std::size_t d : full.degree()) CHECK(d == 3);
  const GraphTopology cliques = GraphTopology::disjoint_cliques({2, 3});
  CHECK(cliques.n_edges() == 2 + 6);
}

TEST_CASE("EGNN layer with zeroed output projections is the identity") {
  Rng rng(6);
  const NetConfig cfg{1, 3, 8};
  ParamStore store;
  init_egnn_layer(store, "L", cfg, rng);
  store.get_mut("L.grade_linear.w").data.assign(store.get("L.grade_linear.w").size(), 0.0);
  store.get_mut("L.node_mlp.l2.w").data.assign(store.get("L.node_mlp.l2.w").size(), 0.0);
  store.get_mut("L.node_mlp.l2.b").data.assign(store.get("L.node_mlp.l2.b").size(), 0.0);
  const GraphTopology topo = GraphTopology::fully_connected(4);
  const Tensor x = random_field(4, 3, rng).to_tensor();
  const Tensor h = random_tensor({4, 8}, rng);
  ParamBinding bind(store, false);
  auto [xo, ho] = clifford_egnn_layer(constant(x), constant(h), edge_geometry(x, topo), topo, bind, "L", cfg);
  CHECK(xo.value() == x);
  CHECK(ho.value() == h);

  CHECK_THROWS_AS(clifford_egnn_layer(constant(x), constant(h), edge_geometry(x, topo),
                                      GraphTopology::fully_connected(5), bind, "L", cfg),
                  std::invalid_argument);
}

TEST_CASE("three stacked layers are E(3)- and permutation-equivariant") {
  Rng rng(7);
  const NetConfig cfg{3, 4, 12};
  ParamStore store;
  for (int l = 0; l < 3; ++l) init_egnn_layer(store, "net.layer" + std::to_string(l), cfg, rng);
  ParamBinding bind(store, false);

  auto run = [&](const MultivectorField& x, const Tensor& h, const GraphTopology& topo) {
    Var xv = constant(x.to_tensor()), hv = constant(h);
    const EdgeGeometry geo = edge_geometry(x.to_tensor(), topo);
    for (int l = 0; l < 3; ++l) {
      auto [xn, hn] = clifford_egnn_layer(xv, hv, geo, topo, bind, "net.layer" + std::to_string(l), cfg);
      xv = xn;
      hv = hn;
    }
    return std::pair{MultivectorField::from_tensor(xv.value()), hv.value()};
  };

  double equi = 0.0, inv = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 5;
    const GraphTopology topo = GraphTopology::fully_connected(n);
    const MultivectorField x = random_field(n, 4, rng);
    const Tensor h = random_tensor({n, 12}, rng);
    const OrthogonalAction r = random_orthogonal(rng, trial % 2 ? -1 : 1);
    // Rigid motion: rotate all channels, translate the position channel, re-centre.
    MultivectorField moved = apply_orthogonal(r, x);
    const Vec3 shift{rng.normal() * 5, rng.normal() * 5, rng.normal() * 5};
    for (std::size_t i = 0; i < n; ++i)
      for (int k = 0; k < 3; ++k) moved(i, 0, 1 + k) += shift[k];
    const auto [xa, ha] = run(centred(x), h, topo);
    const auto [xb, hb] = run(centred(moved), h, topo);
    equi = std::max(equi, oracle::rel_err(xb.values, apply_orthogonal(r, xa).values));
    inv = std::max(inv, oracle::rel_err(hb.data, ha.data));

    // Relabel nodes by a random permutation.
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t k = n - 1; k > 0; --k) std::swap(perm[k], perm[rng.uniform_index(k + 1)]);
    MultivectorField xp(n, 4);
    Tensor hp({n, 12});
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < 4; ++c) xp.set(i, c, x.at(perm[i], c));
      for (std::size_t f = 0; f < 12; ++f) hp.data[i * 12 + f] = h.data[perm[i] * 12 + f];
    }
    const auto [xq, hq] = run(xp, hp, topo);
    const auto [xr, hr] = run(x, h, topo);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < 4; ++c) CHECK(max_abs_diff(xq.at(i, c), xr.at(perm[i], c)) <= 1e-10);
  }
  CHECK(equi <= 1e-8);
  CHECK(inv <= 1e-10);
}

TEST_CASE("denoiser equivariance, invariance and determinism") {
  Rng rng(8);
  const NetConfig cfg{2, 4, 16};
  ParamStore params;
  init_denoiser_params(params, cfg, rng);
  double equi = 0.0, inv = 0.0;
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 3 + static_cast<std::size_t>(trial % 3) * 3;
    const GraphTopology topo = GraphTopology::fully_connected(n);
    const MultivectorField z = centred(random_field(n, 1, rng));
    const NodeScalars h = random_scalars(n, kAtomFeatures, rng);
    const OrthogonalAction r = random_orthogonal(rng, trial % 2 ? -1 : 1);
    const auto [ex, eh] = denoiser_forward(z, h, 5, 10, topo, params, cfg);
    const auto [rx, rh] = denoiser_forward(apply_orthogonal(r, z), h, 5, 10, topo, params, cfg);
    equi = std::max(equi, oracle::rel_err(rx.values, apply_orthogonal(r, ex).values));
    inv = std::max(inv, oracle::rel_err(rh.values, eh.values));
    // Output one-vector channel is centred.
    for (std::size_t b = 1; b <= 3; ++b) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += ex(i, 0, b);
      CHECK(std::abs(s) <= 1e-12);
    }
    const auto again = denoiser_forward(z, h, 5, 10, topo, params, cfg);
    CHECK(again.first == ex);
    CHECK(again.second == eh);
  }
  CHECK(equi <= 1e-6);
  CHECK(inv <= 1e-10);

  const GraphTopology topo = GraphTopology::fully_connected(3);
  const MultivectorField z = random_field(3, 1, rng);
  const NodeScalars h = random_scalars(3, kAtomFeatures, rng);
  CHECK_THROWS_AS(denoiser_forward(z, h, 0, 10, topo, params, cfg), std::out_of_range);
  CHECK_THROWS_AS(denoiser_forward(z, h, 11, 10, topo, params, cfg), std::out_of_range);
}

TEST_CASE("encoder keeps positions in grade 1 and is equivariant") {
  Rng rng(9);
  const NetConfig cfg{2, 4, 16};
  ParamStore params;
  init_encoder_params(params, cfg, rng);
  double equi = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 4;
    const GraphTopology topo = GraphTopology::fully_connected(n);
    std::vector<Vec3> pos(n);
    for (auto& p : pos) p = {rng.normal(), rng.normal(), rng.normal()};
    const NodeScalars h = random_scalars(n, kAtomFeatures, rng);
    const MultivectorField z = encoder_forward(pos, h, topo, params, cfg);
    for (std::size_t i = 0; i < n; ++i)
      for (int k = 0; k < 3; ++k) CHECK(z(i, 0, 1 + k) == pos[i][k]);
    const OrthogonalAction r = random_orthogonal(rng, trial % 2 ? -1 : 1);
    std::vector<Vec3> rpos(n);
    for (std::size_t i = 0; i < n; ++i) rpos[i] = r.apply(pos[i]);
    equi = std::max(equi, oracle::rel_err(encoder_forward(rpos, h, topo, params, cfg).values,
                                          apply_orthogonal(r, z).values));
  }
  CHECK(equi <= 1e-8);

  ParamStore zero = params;
  for (const auto& name : zero.names()) zero.get_mut(name).data.assign(zero.get(name).size(), 0.0);
  const GraphTopology topo = GraphTopology::fully_connected(3);
  std::vector<Vec3> pos{{1, 0, 0}, {0, 1, 0}, {-1, -1, 0}};
  const MultivectorField z = encoder_forward(pos, random_scalars(3, kAtomFeatures, rng), topo, zero, cfg);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t b = 0; b < 8; ++b)
      CHECK(z(i, 0, b) == (kBladeGrade[b] == 1 ? pos[i][b - 1] : 0.0));
}

TEST_CASE("denoiser gradient matches finite differences on a 4-atom instance") {
  Rng rng(10);
  const NetConfig cfg{2, 3, 8};
  ParamStore params;
  init_denoiser_params(params, cfg, rng);
  const BatchLayout layout = BatchLayout::for_sizes({4});
  const Tensor z = centred(random_field(4, 1, rng)).to_tensor();
  const Tensor h = random_tensor({4, kAtomFeatures}, rng);
  const Tensor tx = random_tensor({4, 1, 8}, rng), th = random_tensor({4, kAtomFeatures}, rng);
  auto loss = [&](ParamBinding& b) {
    DenoiserOutput out = denoiser_forward(constant(z), constant(h), {0.3}, layout, b, cfg);
    return mse(out.eps_x, constant(tx)) + mse(out.eps_h, constant(th));
  };
  ParamBinding bind(params);
  const GradMap g = gradients(loss(bind), bind);
  const double err = oracle::gradcheck(params, g, [&](const ParamStore& p) {
    ParamBinding b(p, false);
    return loss(b).value().data[0];
  }, rng, 6);
  CHECK(err < 1e-4);
}
