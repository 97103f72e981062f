#pragma once

// Independent reference computations used by the tests. Nothing here calls
// the code under test except where a helper explicitly takes it as input.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "cdm/autodiff.hpp"
#include "cdm/clifford.hpp"
#include "cdm/moldata.hpp"
#include "cdm/rng.hpp"

namespace oracle {

using cdm::Mat3;
using cdm::Multivector;
using cdm::Vec3;

// ---- Cayley table by generator-word reduction ----------------------------------

// Basis blades as signed words over generators 1, 2, 3 (e31 = e3 e1).
struct Word {
  int sign;
  std::vector<int> gens;
};

inline const std::array<Word, 8>& basis_words() {
  static const std::array<Word, 8> words{{{1, {}},
                                          {1, {1}},
                                          {1, {2}},
                                          {1, {3}},
                                          {1, {2, 3}},
                                          {1, {3, 1}},
                                          {1, {1, 2}},
                                          {1, {1, 2, 3}}}};
  return words;
}

// Bubble-sorts the concatenated word; each adjacent swap of distinct
// generators flips the sign, equal neighbours cancel (e_i e_i = +1).
inline Word reduce(Word w) {
  bool changed = true;
  while (changed) {
    changed = false;
    for (std::size_t k = 0; k + 1 < w.gens.size(); ++k) {
      if (w.gens[k] == w.gens[k + 1]) {
        w.gens.erase(w.gens.begin() + static_cast<long>(k), w.gens.begin() + static_cast<long>(k) + 2);
        changed = true;
        break;
      }
      if (w.gens[k] > w.gens[k + 1]) {
        std::swap(w.gens[k], w.gens[k + 1]);
        w.sign = -w.sign;
        changed = true;
        break;
      }
    }
  }
  return w;
}

// Product of basis blades a and b as (blade index, sign).
inline std::pair<int, int> blade_product(int a, int b) {
  const auto& B = basis_words();
  Word w{B[a].sign * B[b].sign, B[a].gens};
  w.gens.insert(w.gens.end(), B[b].gens.begin(), B[b].gens.end());
  w = reduce(w);
  for (int c = 0; c < 8; ++c) {
    Word canon = reduce(B[c]);
    if (canon.gens == w.gens) return {c, w.sign * canon.sign};
  }
  return {-1, 0};
}

// Full product from the reduced words, independent of the library table.
inline Multivector product(const Multivector& x, const Multivector& y) {
  Multivector out;
  for (int a = 0; a < 8; ++a)
    for (int b = 0; b < 8; ++b) {
      auto [c, s] = blade_product(a, b);
      out[c] += s * x[a] * y[b];
    }
  return out;
}

// ---- versor path for the O(3) action -----------------------------------------------

inline Multivector vector_mv(const Vec3& n) {
  Multivector v;
  v[1] = n[0];
  v[2] = n[1];
  v[3] = n[2];
  return v;
}

// Unit normals n_1..n_k with R = H(n_1) ... H(n_k), H(n) = I - 2 n n^T.
// Each column is first sent to -sign(x_c) e_c, so the reflected difference
// never has length below 1, then flipped to +e_c by H(e_c) when needed.
inline std::vector<Vec3> householder_factors(const Mat3& R) {
  Mat3 A = R;
  std::vector<Vec3> normals;
  auto reflect_left = [&](const Vec3& n) {
    for (int j = 0; j < 3; ++j) {
      double dot = 0.0;
      for (int i = 0; i < 3; ++i) dot += n[i] * A[i][j];
      for (int i = 0; i < 3; ++i) A[i][j] -= 2.0 * n[i] * dot;
    }
    normals.push_back(n);
  };
  for (int col = 0; col < 3; ++col) {
    Vec3 d{A[0][col], A[1][col], A[2][col]};
    const double sign = d[col] >= 0.0 ? 1.0 : -1.0;
    d[col] += sign;
    const double len = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
    reflect_left({d[0] / len, d[1] / len, d[2] / len});
    if (A[col][col] < 0.0) {
      Vec3 e{0, 0, 0};
      e[col] = 1.0;
      reflect_left(e);
    }
  }
  // H_k ... H_1 R = I, so R = H_1 ... H_k.
  return normals;
}

// rho(w)(x) = w alpha^k(x) w~ for the versor w = n_1 ... n_k.
inline Multivector versor_action(const Mat3& R, const Multivector& x) {
  const auto normals = householder_factors(R);
  Multivector w = Multivector::scalar(1.0);
  for (const Vec3& n : normals) w = product(w, vector_mv(n));
  Multivector twisted = x;
  if (normals.size() % 2 == 1) twisted = cdm::grade_involution(x);
  return product(product(w, twisted), cdm::reverse(w));
}

// ---- random inputs --------------------------------------------------------------------

inline Multivector random_mv(cdm::Rng& rng) {
  Multivector v;
  for (double& c : v.coeffs) c = rng.normal();
  return v;
}

inline double max_abs(const std::vector<double>& a) {
  double m = 0.0;
  for (double v : a) m = std::max(m, std::abs(v));
  return m;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) m = std::max(m, std::abs(a[k] - b[k]));
  return m;
}

// max |a - b| / max |b|.
inline double rel_err(const std::vector<double>& a, const std::vector<double>& b) {
  return max_abs_diff(a, b) / std::max(max_abs(b), 1e-300);
}

// ---- central finite differences ---------------------------------------------------------

// Largest |fd - analytic| / max(1, |analytic|) over the checked coordinates.
// At most `per_tensor` coordinates of each parameter are probed (0 = all).
inline double gradcheck(const cdm::ParamStore& params, const cdm::GradMap& analytic,
                        const std::function<double(const cdm::ParamStore&)>& loss, cdm::Rng& rng,
                        std::size_t per_tensor = 0, double step = 1e-5) {
  double worst = 0.0;
  for (const auto& name : params.names()) {
    const std::size_t size = params.get(name).size();
    std::vector<std::size_t> coords;
    if (per_tensor == 0 || per_tensor >= size) {
      for (std::size_t k = 0; k < size; ++k) coords.push_back(k);
    } else {
      for (std::size_t k = 0; k < per_tensor; ++k) coords.push_back(rng.uniform_index(size));
    }
    for (std::size_t k : coords) {
      cdm::ParamStore plus = params, minus = params;
      plus.get_mut(name).data[k] += step;
      minus.get_mut(name).data[k] -= step;
      const double fd = (loss(plus) - loss(minus)) / (2.0 * step);
      const double an = analytic.at(name).data[k];
      worst = std::max(worst, std::abs(fd - an) / std::max(1.0, std::abs(an)));
    }
  }
  return worst;
}

// ---- AHU canonical form for labelled trees ---------------------------------------------

struct LabelledTree {
  std::vector<cdm::Element> labels;
  std::vector<cdm::Bond> edges;
};

inline std::string ahu(const LabelledTree& t, int node, int parent, int parent_order,
                       const std::vector<std::vector<std::pair<int, int>>>& adj) {
  std::vector<std::string> kids;
  for (auto [nb, order] : adj[node])
    if (nb != parent) kids.push_back(ahu(t, nb, node, order, adj));
  std::sort(kids.begin(), kids.end());
  std::string s = "(" + std::to_string(static_cast<int>(t.labels[node])) + ":" + std::to_string(parent_order);
  for (const auto& k : kids) s += k;
  return s + ")";
}

// Canonical string of an unrooted labelled tree: minimum AHU string over all roots.
inline std::string tree_canonical(const LabelledTree& t) {
  const int n = static_cast<int>(t.labels.size());
  std::vector<std::vector<std::pair<int, int>>> adj(n);
  for (const auto& e : t.edges) {
    adj[e.i].push_back({static_cast<int>(e.j), e.order});
    adj[e.j].push_back({static_cast<int>(e.i), e.order});
  }
  std::string best;
  for (int r = 0; r < n; ++r) {
    std::string s = ahu(t, r, -1, 0, adj);
    if (best.empty() || s < best) best = s;
  }
  return best;
}

// ---- molecules ---------------------------------------------------------------------------

inline cdm::MolecularGraph make_mol(std::vector<Vec3> pos, std::vector<cdm::Element> types) {
  cdm::MolecularGraph m;
  m.positions = std::move(pos);
  m.atom_types = std::move(types);
  m.charges.assign(m.positions.size(), 0);
  return m;
}

inline cdm::MolecularGraph methane() {
  const double s = 1.09 / std::sqrt(3.0);
  using cdm::Element;
  return make_mol({{0, 0, 0}, {s, s, s}, {s, -s, -s}, {-s, s, -s}, {-s, -s, s}},
                  {Element::C, Element::H, Element::H, Element::H, Element::H});
}

inline cdm::MolecularGraph hydrogen() {
  using cdm::Element;
  return make_mol({{0, 0, 0.37}, {0, 0, -0.37}}, {Element::H, Element::H});
}

// Pyramidal NH3: N-H 1.01 A, H-N-H 106.7 degrees.
inline cdm::MolecularGraph ammonia() {
  using cdm::Element;
  const double bond = 1.01, angle = 106.7 * M_PI / 180.0;
  // Cone half-angle theta from cos(angle) = 1 - 1.5 sin^2(theta).
  const double sin_t = std::sqrt((1.0 - std::cos(angle)) / 1.5);
  const double cos_t = std::sqrt(1.0 - sin_t * sin_t);
  std::vector<Vec3> pos{{0, 0, 0}};
  for (int k = 0; k < 3; ++k) {
    const double phi = 2.0 * M_PI * k / 3.0;
    pos.push_back({bond * sin_t * std::cos(phi), bond * sin_t * std::sin(phi), -bond * cos_t});
  }
  return make_mol(pos, {Element::N, Element::H, Element::H, Element::H});
}

}  // namespace oracle
