#include "doctest.h"

#include <cmath>

#include "cdm/autodiff.hpp"
#include "oracles.hpp"

using namespace cdm;

namespace {

Tensor random_tensor(Shape s, Rng& rng, double offset = 0.0) {
  Tensor t(std::move(s));
  for (double& v : t.data) v = rng.normal() + offset;
  return t;
}

// Central-difference check of d f / d x for every input coordinate.
double fd_check(const std::vector<Tensor>& inputs, const std::function<Var(const std::vector<Var>&)>& f) {
  std::vector<Var> vars;
  for (const auto& t : inputs) vars.push_back(variable(t));
  const Var out = f(vars);
  backward(out);
  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Tensor g = vars[i].grad();
    for (std::size_t k = 0; k < inputs[i].size(); ++k) {
      auto eval = [&](double delta) {
        std::vector<Var> cs;
        for (std::size_t j = 0; j < inputs.size(); ++j) {
          Tensor t = inputs[j];
          if (j == i) t.data[k] += delta;
          cs.push_back(constant(t));
        }
        return f(cs).value().data[0];
      };
      const double fd = (eval(1e-5) - eval(-1e-5)) / 2e-5;
      worst = std::max(worst, std::abs(fd - g.data[k]) / std::max(1.0, std::abs(g.data[k])));
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("tensor construction validates length") {
  CHECK_THROWS_AS(Tensor({2, 3}, std::vector<double>(5)), std::invalid_argument);
  CHECK(Tensor({2, 3}).size() == 6);
  CHECK(Tensor::scalar(3.0).rank() == 0);
}

TEST_CASE("sum of squares and its gradient") {
  Var x = variable(Tensor({3}, std::vector<double>{3, 0, 0}));
  Var loss = sum(x * x);
  CHECK(loss.value().data[0] == 9.0);
  backward(loss);
  CHECK(x.grad().data == std::vector<double>{6, 0, 0});
}

TEST_CASE("matmul gradient is an outer product") {
  Rng rng(1);
  const Tensor W = random_tensor({2, 3}, rng), x = random_tensor({3, 1}, rng);
  Var w = variable(W);
  backward(sum(matmul(w, constant(x))));
  const Tensor g = w.grad();
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j) CHECK(g.data[i * 3 + j] == doctest::Approx(x.data[j]).epsilon(1e-15));
}

TEST_CASE("shape mismatch names both shapes") {
  Var a = constant(Tensor({2, 3})), b = constant(Tensor({3, 2}));
  try {
    add(a, b);
    FAIL("expected an exception");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find(shape_str({2, 3})) != std::string::npos);
    CHECK(msg.find(shape_str({3, 2})) != std::string::npos);
  }
  CHECK_THROWS_AS(matmul(a, a), std::invalid_argument);
  CHECK_THROWS_AS(concat({a, constant(Tensor({3, 3}))}), std::invalid_argument);
}

TEST_CASE("backward rejects non-scalar and non-finite losses") {
  Var x = variable(Tensor({2}, 1.0));
  CHECK_THROWS_AS(backward(x * x), std::invalid_argument);
  Var y = variable(Tensor({1}, std::vector<double>{INFINITY}));
  CHECK_THROWS_AS(backward(sum(y)), std::domain_error);
}

TEST_CASE("every op passes a finite-difference check") {
  Rng rng(2024);
  auto a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng), m = random_tensor({4, 2}, rng);
  CHECK(fd_check({a, b}, [](auto v) { return sum(v[0] + v[1] * v[0]); }) < 1e-4);
  CHECK(fd_check({a, b}, [](auto v) { return sum(scale(v[0] - v[1], 1.7) * v[1]); }) < 1e-4);
  CHECK(fd_check({a, m}, [](auto v) { return sum(silu(matmul(v[0], v[1]))); }) < 1e-4);
  CHECK(fd_check({a, b}, [](auto v) { return mse(v[0], v[1]); }) < 1e-4);
  CHECK(fd_check({a}, [](auto v) { return mean(silu(v[0]) * v[0]); }) < 1e-4);
  CHECK(fd_check({random_tensor({4}, rng, 3.0)}, [](auto v) { return sum(sqrt(v[0] * v[0])); }) < 1e-4);
  CHECK(fd_check({random_tensor({4}, rng)}, [](auto v) { return sum(broadcast_rows(v[0], 3) * broadcast_rows(v[0], 3)); }) < 1e-4);
  CHECK(fd_check({a, b}, [](auto v) { return sum(concat({v[0], v[1] * v[1]}) * concat({v[1], v[0]})); }) < 1e-4);
  CHECK(fd_check({a}, [](auto v) {
          IndexPtr idx = make_index({0, 5, 5, 11, 2});
          return sum(gather(v[0], idx, {5}) * gather(v[0], idx, {5}));
        }) < 1e-4);
  CHECK(fd_check({a}, [](auto v) {
          IndexPtr idx = make_index({0, 1, 0, 2, 3, 3, 1, 2, 0, 0, 1, 1});
          Var s = scatter_add(v[0], idx, {4});
          return sum(s * s);
        }) < 1e-4);
  CHECK(fd_check({a}, [](auto v) { return sum(reshape(v[0], {2, 6}) * reshape(v[0], {2, 6})); }) < 1e-4);
}

TEST_CASE("random three-layer composition matches finite differences") {
  Rng rng(77);
  const auto x = random_tensor({5, 3}, rng);
  const auto w1 = random_tensor({3, 6}, rng), w2 = random_tensor({6, 6}, rng), w3 = random_tensor({6, 1}, rng);
  CHECK(fd_check({w1, w2, w3}, [&](auto v) {
          Var h = silu(matmul(constant(x), v[0]));
          h = silu(matmul(h, v[1]));
          return mean(matmul(h, v[2]));
        }) < 1e-4);
}

TEST_CASE("gradients over a parameter store") {
  ParamStore store;
  store.add("p", Tensor({3}, std::vector<double>{1, -2, 0.5}));
  store.add("unused", Tensor({2}, 4.0));
  CHECK_THROWS_AS(store.add("p", Tensor({1})), std::invalid_argument);
  CHECK(store.parameter_count() == 5);
  CHECK(store.names() == std::vector<std::string>{"p", "unused"});

  ParamBinding bind(store);
  Var p = bind("p");
  const GradMap g = gradients(sum(p * p), bind);
  CHECK(g.at("p").data == std::vector<double>{2, -4, 1});
  CHECK(g.at("unused").data == std::vector<double>{0, 0});

  ParamBinding bind2(store);
  CHECK_THROWS_AS(gradients(bind2("p") * bind2("p"), bind2), std::invalid_argument);
}

TEST_CASE("gradient of a sum of losses is the sum of gradients") {
  Rng rng(4);
  ParamStore store;
  store.add("w", random_tensor({3, 3}, rng));
  const Tensor x = random_tensor({2, 3}, rng);
  auto l1 = [&](ParamBinding& b) { return sum(silu(matmul(constant(x), b("w")))); };
  auto l2 = [&](ParamBinding& b) { return mean(b("w") * b("w")); };
  ParamBinding b1(store), b2(store), b3(store);
  const GradMap g1 = gradients(l1(b1), b1);
  const GradMap g2 = gradients(l2(b2), b2);
  const GradMap g12 = gradients(l1(b3) + l2(b3), b3);
  for (std::size_t k = 0; k < 9; ++k) CHECK(g12.at("w").data[k] == g1.at("w").data[k] + g2.at("w").data[k]);
}

TEST_CASE("adam step") {
  ParamStore store;
  store.add("x", Tensor({1}, std::vector<double>{0.0}));
  AdamState state;
  AdamConfig cfg;
  cfg.lr = 0.1;

  // Hand-computed first step: m = 0.1, v = 0.001, bias-corrected 1 and 1,
  // update = lr * 1 / (1 + 1e-8).
  GradMap g{{"x", Tensor({1}, std::vector<double>{1.0})}};
  ParamStore next = adam_step(store, g, state, cfg);
  CHECK(next.get("x").data[0] == doctest::Approx(-0.1 / (1.0 + 1e-8)).epsilon(1e-14));
  CHECK(state.step == 1);

  // Zero gradient: parameters unchanged, moments decay.
  const double m_before = state.m.at("x").data[0], v_before = state.v.at("x").data[0];
  ParamStore same = adam_step(next, {{"x", Tensor({1}, 0.0)}}, state, cfg);
  CHECK(state.m.at("x").data[0] == doctest::Approx(0.9 * m_before));
  CHECK(state.v.at("x").data[0] == doctest::Approx(0.999 * v_before));
  // Zero gradient with decaying but non-zero first moment still moves.
  CHECK(same.get("x").data[0] != next.get("x").data[0]);

  AdamState fresh;
  ParamStore untouched = adam_step(store, {{"x", Tensor({1}, 0.0)}}, fresh, cfg);
  CHECK(untouched == store);

  CHECK_THROWS_AS(adam_step(store, GradMap{}, state, cfg), std::invalid_argument);
  CHECK_THROWS_AS(adam_step(store, {{"x", Tensor({2})}}, state, cfg), std::invalid_argument);
}

TEST_CASE("adam runs are bit-identical") {
  auto run = [] {
    Rng rng(9);
    ParamStore store;
    store.add("w", random_tensor({4, 4}, rng));
    const Tensor x = random_tensor({3, 4}, rng);
    AdamState state;
    for (int step = 0; step < 20; ++step) {
      ParamBinding b(store);
      const GradMap g = gradients(mean(silu(matmul(constant(x), b("w")))), b);
      store = adam_step(store, g, state, AdamConfig{0.01});
    }
    return store;
  };
  CHECK(run() == run());
}
