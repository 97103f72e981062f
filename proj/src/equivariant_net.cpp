#include "cdm/equivariant_net.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <tuple>

namespace cdm {

namespace {

void require_field_shape(const Var& x, const char* what) {
  const Shape& s = x.shape();
  if (s.size() != 3 || s[2] != kBladeCount) {
    throw std::invalid_argument(std::string(what) + ": expected [n, c, 8] field, got " +
                                shape_str(s));
  }
}

struct GradeLinearIndex {
  std::array<IndexPtr, kGradeCount> x, w, out;
};

const GradeLinearIndex& grade_linear_index(std::size_t n, std::size_t cin, std::size_t cout) {
  thread_local std::map<std::tuple<std::size_t, std::size_t, std::size_t>, GradeLinearIndex> cache;
  auto key = std::make_tuple(n, cin, cout);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  GradeLinearIndex idx;
  for (int g = 0; g < kGradeCount; ++g) {
    const std::size_t d = kGradeSize[g];
    const std::size_t off = kGradeOffset[g];
    Index xi, wi, oi;
    xi.reserve(n * d * cin);
    oi.reserve(n * d * cout);
    for (std::size_t node = 0; node < n; ++node) {
      for (std::size_t b = 0; b < d; ++b) {
        for (std::size_t i = 0; i < cin; ++i) {
          xi.push_back(static_cast<std::uint32_t>((node * cin + i) * kBladeCount + off + b));
        }
        for (std::size_t o = 0; o < cout; ++o) {
          oi.push_back(static_cast<std::uint32_t>((node * cout + o) * kBladeCount + off + b));
        }
      }
    }
    for (std::size_t i = 0; i < cin; ++i)
      for (std::size_t o = 0; o < cout; ++o)
        wi.push_back(static_cast<std::uint32_t>((g * cin + i) * cout + o));
    idx.x[g] = make_index(std::move(xi));
    idx.w[g] = make_index(std::move(wi));
    idx.out[g] = make_index(std::move(oi));
  }
  return cache.emplace(key, std::move(idx)).first->second;
}

struct ProductIndex {
  IndexPtr left, right, out, mix;
  Tensor sign;  // [c, 64]
};

const ProductIndex& product_index(std::size_t m, std::size_t c) {
  thread_local std::map<std::pair<std::size_t, std::size_t>, ProductIndex> cache;
  auto key = std::make_pair(m, c);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  const CayleyTable& table = CayleyTable::standard();
  constexpr std::size_t kPairs = kBladeCount * kBladeCount;
  Index left, right, out, mix;
  left.reserve(m * c * kPairs);
  right.reserve(m * c * kPairs);
  out.reserve(m * c * kPairs);
  for (std::size_t row = 0; row < m; ++row) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t base = (row * c + ch) * kBladeCount;
      for (std::size_t p = 0; p < kBladeCount; ++p) {
        for (std::size_t q = 0; q < kBladeCount; ++q) {
          left.push_back(static_cast<std::uint32_t>(base + p));
          right.push_back(static_cast<std::uint32_t>(base + q));
          out.push_back(static_cast<std::uint32_t>(base + table(p, q).index));
        }
      }
    }
  }
  Tensor sign({c, kPairs});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t p = 0; p < kBladeCount; ++p) {
      for (std::size_t q = 0; q < kBladeCount; ++q) {
        const BladeProduct& bp = table(p, q);
        const std::size_t gi = kBladeGrade[p], gj = kBladeGrade[q], gk = kBladeGrade[bp.index];
        mix.push_back(static_cast<std::uint32_t>(((gi * kGradeCount + gj) * kGradeCount + gk) * c + ch));
        sign.data[ch * kPairs + p * kBladeCount + q] = bp.sign;
      }
    }
  }
  ProductIndex idx{make_index(std::move(left)), make_index(std::move(right)),
                   make_index(std::move(out)), make_index(std::move(mix)), std::move(sign)};
  return cache.emplace(key, std::move(idx)).first->second;
}

Tensor normal_tensor(Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.data) v = stddev * rng.normal();
  return t;
}

void add_linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out,
                Rng& rng, double gain = 1.0) {
  store.add(name + ".w", normal_tensor({in, out}, gain / std::sqrt(static_cast<double>(in)), rng));
  store.add(name + ".b", Tensor({out}, 0.0));
}

void add_grade_linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out,
                      Rng& rng, double gain = 1.0) {
  store.add(name, normal_tensor({kGradeCount, in, out},
                                gain / std::sqrt(static_cast<double>(in)), rng));
}

// [n, 1, 8] ones in the scalar blade, used as a constant input channel.
Var scalar_channel(std::size_t n) {
  Tensor t({n, 1, kBladeCount});
  for (std::size_t i = 0; i < n; ++i) t.data[i * kBladeCount] = 1.0;
  return constant(std::move(t));
}

// Stacks [n, 1, 8] fields along the channel axis.
Var stack_channels(const std::vector<Var>& parts) {
  const std::size_t n = parts.front().shape()[0];
  std::vector<Var> flat;
  std::size_t channels = 0;
  for (const Var& p : parts) {
    channels += p.shape()[1];
    flat.push_back(reshape(p, {n, p.shape()[1] * kBladeCount}));
  }
  return reshape(concat(flat), {n, channels, kBladeCount});
}

// Constant [n, inner...] with row i filled by 1 / max(deg_i, 1).
Var inverse_degree(const GraphTopology& topo, std::size_t inner) {
  Tensor t({topo.n_nodes() * inner});
  for (std::size_t i = 0; i < topo.n_nodes(); ++i) {
    const double inv = 1.0 / static_cast<double>(std::max<std::size_t>(topo.degree()[i], 1));
    std::fill_n(t.data.begin() + i * inner, inner, inv);
  }
  return constant(std::move(t));
}

Var mean_aggregate(const Var& messages, const GraphTopology& topo) {
  Var agg = scatter_rows(messages, topo.receivers(), topo.n_nodes());
  const std::size_t inner = agg.size() / std::max<std::size_t>(topo.n_nodes(), 1);
  return agg * reshape(inverse_degree(topo, inner), agg.shape());
}

std::vector<std::size_t> single_molecule_offsets(std::size_t n) { return {0, n}; }

Var lift_inputs(const Var& field, const std::string& prefix, ParamBinding& params) {
  const std::size_t n = field.shape()[0];
  return grade_linear(stack_channels({field, scalar_channel(n)}), params(prefix + ".embed_x.w"));
}

Var run_layers(Var& x, Var h, const EdgeGeometry& geo, const GraphTopology& topo,
               ParamBinding& params, const std::string& prefix, const NetConfig& cfg) {
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    auto [xn, hn] = clifford_egnn_layer(x, h, geo, topo, params,
                                        prefix + ".layer" + std::to_string(l), cfg);
    x = std::move(xn);
    h = std::move(hn);
  }
  return h;
}

void init_network(ParamStore& store, const std::string& prefix, std::size_t scalar_in,
                  const NetConfig& cfg, Rng& rng) {
  add_grade_linear(store, prefix + ".embed_x.w", 2, cfg.mv_channels, rng);
  add_linear(store, prefix + ".embed_h", scalar_in, cfg.scalar_hidden, rng);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    init_egnn_layer(store, prefix + ".layer" + std::to_string(l), cfg, rng);
  }
  add_grade_linear(store, prefix + ".out_x.w", cfg.mv_channels, 1, rng);
}

}  // namespace

// ---- containers -------------------------------------------------------------

Multivector MultivectorField::at(std::size_t n, std::size_t c) const {
  Multivector v;
  for (std::size_t b = 0; b < kBladeCount; ++b) v[b] = (*this)(n, c, b);
  return v;
}

void MultivectorField::set(std::size_t n, std::size_t c, const Multivector& v) {
  for (std::size_t b = 0; b < kBladeCount; ++b) (*this)(n, c, b) = v[b];
}

bool MultivectorField::all_finite() const {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

Tensor MultivectorField::to_tensor() const { return Tensor({n_nodes, n_channels, kBladeCount}, values); }

MultivectorField MultivectorField::from_tensor(const Tensor& t) {
  if (t.shape.size() != 3 || t.shape[2] != kBladeCount) {
    throw std::invalid_argument("multivector field: expected [n, c, 8], got " + shape_str(t.shape));
  }
  MultivectorField f(t.shape[0], t.shape[1]);
  f.values = t.data;
  return f;
}

Tensor NodeScalars::to_tensor() const { return Tensor({n_nodes, n_feat}, values); }

NodeScalars NodeScalars::from_tensor(const Tensor& t) {
  if (t.shape.size() != 2) {
    throw std::invalid_argument("node scalars: expected [n, f], got " + shape_str(t.shape));
  }
  NodeScalars s(t.shape[0], t.shape[1]);
  s.values = t.data;
  return s;
}

MultivectorField apply_orthogonal(const OrthogonalAction& action, const MultivectorField& field) {
  MultivectorField out(field.n_nodes, field.n_channels);
  for (std::size_t n = 0; n < field.n_nodes; ++n)
    for (std::size_t c = 0; c < field.n_channels; ++c) out.set(n, c, action.apply(field.at(n, c)));
  return out;
}

GraphTopology::GraphTopology(std::size_t n_nodes, std::vector<Edge> edges)
    : n_nodes_(n_nodes), edges_(std::move(edges)), degree_(n_nodes, 0) {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> sorted;
  sorted.reserve(edges_.size());
  for (const Edge& e : edges_) {
    if (e.receiver >= n_nodes || e.sender >= n_nodes) {
      throw std::invalid_argument("graph topology: edge (" + std::to_string(e.receiver) + ", " +
                                  std::to_string(e.sender) + ") references a node outside [0, " +
                                  std::to_string(n_nodes) + ")");
    }
    if (e.receiver == e.sender) {
      throw std::invalid_argument("graph topology: self-loop at node " + std::to_string(e.sender));
    }
    sorted.emplace_back(e.receiver, e.sender);
    receivers_.push_back(e.receiver);
    senders_.push_back(e.sender);
    ++degree_[e.receiver];
  }
  std::sort(sorted.begin(), sorted.end());
  for (const Edge& e : edges_) {
    if (!std::binary_search(sorted.begin(), sorted.end(), std::make_pair(e.sender, e.receiver))) {
      throw std::invalid_argument("graph topology: edge lacks its reverse direction");
    }
  }
}

GraphTopology GraphTopology::fully_connected(std::size_t n_nodes) {
  return disjoint_cliques({n_nodes});
}

GraphTopology GraphTopology::disjoint_cliques(const std::vector<std::size_t>& sizes) {
  std::vector<Edge> edges;
  std::size_t base = 0;
  for (std::size_t n : sizes) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j) {
          edges.push_back({static_cast<std::uint32_t>(base + i), static_cast<std::uint32_t>(base + j)});
        }
    base += n;
  }
  return GraphTopology(base, std::move(edges));
}

BatchLayout BatchLayout::for_sizes(const std::vector<std::size_t>& sizes) {
  BatchLayout layout;
  layout.offsets.push_back(0);
  for (std::size_t n : sizes) {
    if (n == 0) throw std::invalid_argument("batch layout: empty molecule");
    layout.offsets.push_back(layout.offsets.back() + n);
  }
  layout.topology = GraphTopology::disjoint_cliques(sizes);
  return layout;
}

// ---- primitives -------------------------------------------------------------

Var grade_linear(const Var& x, const Var& w) {
  require_field_shape(x, "grade_linear");
  const Shape& ws = w.shape();
  const std::size_t n = x.shape()[0];
  const std::size_t cin = x.shape()[1];
  if (ws.size() != 3 || ws[0] != kGradeCount || ws[1] != cin) {
    throw std::invalid_argument("grade_linear: weights " + shape_str(ws) +
                                " do not match input channels of " + shape_str(x.shape()));
  }
  const std::size_t cout = ws[2];
  const GradeLinearIndex& idx = grade_linear_index(n, cin, cout);
  Var out;
  for (int g = 0; g < kGradeCount; ++g) {
    const std::size_t rows = n * kGradeSize[g];
    Var y = matmul(gather(x, idx.x[g], {rows, cin}), gather(w, idx.w[g], {cin, cout}));
    Var part = scatter_add(y, idx.out[g], {n, cout, kBladeCount});
    out = out.defined() ? out + part : part;
  }
  return out;
}

Var geometric_product_layer(const Var& x, const Var& y, const Var& mix) {
  require_field_shape(x, "geometric_product_layer");
  require_field_shape(y, "geometric_product_layer");
  if (x.shape() != y.shape()) {
    throw std::invalid_argument("geometric_product_layer: operand shapes " + shape_str(x.shape()) +
                                " and " + shape_str(y.shape()) + " differ");
  }
  const std::size_t m = x.shape()[0];
  const std::size_t c = x.shape()[1];
  const Shape expected{kGradeCount, kGradeCount, kGradeCount, c};
  if (mix.shape() != expected) {
    throw std::invalid_argument("geometric_product_layer: mix shape " + shape_str(mix.shape()) +
                                " should be " + shape_str(expected));
  }
  constexpr std::size_t kPairs = kBladeCount * kBladeCount;
  const ProductIndex& idx = product_index(m, c);
  const Shape pair_shape{m, c, kPairs};
  Var prod = gather(x, idx.left, pair_shape) * gather(y, idx.right, pair_shape);
  Var weights = gather(mix, idx.mix, {c, kPairs}) * constant(idx.sign);
  return scatter_add(prod * broadcast_rows(weights, m), idx.out, {m, c, kBladeCount});
}

Var multivector_norm_features(const Var& x) {
  require_field_shape(x, "multivector_norm_features");
  const std::size_t n = x.shape()[0];
  const std::size_t c = x.shape()[1];
  Index idx;
  idx.reserve(n * c * kBladeCount);
  for (std::size_t i = 0; i < n * c; ++i)
    for (std::size_t b = 0; b < kBladeCount; ++b)
      idx.push_back(static_cast<std::uint32_t>(i * kGradeCount + kBladeGrade[b]));
  return sqrt(scatter_add(x * x, make_index(std::move(idx)), {n, c * kGradeCount}));
}

Var gather_rows(const Var& x, const std::vector<std::uint32_t>& rows) {
  const Shape& s = x.shape();
  if (s.empty()) throw std::invalid_argument("gather_rows: scalar input");
  const std::size_t inner = x.size() / std::max<std::size_t>(s[0], 1);
  Index idx;
  idx.reserve(rows.size() * inner);
  for (std::uint32_t r : rows)
    for (std::size_t j = 0; j < inner; ++j) idx.push_back(static_cast<std::uint32_t>(r * inner + j));
  Shape out = s;
  out[0] = rows.size();
  return gather(x, make_index(std::move(idx)), out);
}

Var scatter_rows(const Var& x, const std::vector<std::uint32_t>& rows, std::size_t n) {
  const Shape& s = x.shape();
  if (s.empty() || s[0] != rows.size()) {
    throw std::invalid_argument("scatter_rows: " + std::to_string(rows.size()) +
                                " target rows for input " + shape_str(s));
  }
  const std::size_t inner = rows.empty() ? 0 : x.size() / rows.size();
  Index idx;
  idx.reserve(x.size());
  for (std::uint32_t r : rows)
    for (std::size_t j = 0; j < inner; ++j) idx.push_back(static_cast<std::uint32_t>(r * inner + j));
  Shape out = s;
  out[0] = n;
  return scatter_add(x, make_index(std::move(idx)), out);
}

Var linear(const Var& x, const Var& w, const Var& b) {
  return matmul(x, w) + broadcast_rows(b, x.shape()[0]);
}

Var com_project_grade1(const Var& x, const std::vector<std::size_t>& offsets) {
  require_field_shape(x, "com_project_grade1");
  const std::size_t c = x.shape()[1];
  const std::size_t n_seg = offsets.size() - 1;
  if (offsets.back() != x.shape()[0]) {
    throw std::invalid_argument("com_project_grade1: offsets do not cover " + shape_str(x.shape()));
  }
  Index pick, seg, back, put;
  Tensor inv_count({n_seg * c * 3});
  for (std::size_t s = 0; s < n_seg; ++s) {
    const std::size_t count = offsets[s + 1] - offsets[s];
    if (count == 0) throw std::invalid_argument("com_project_grade1: empty molecule");
    std::fill_n(inv_count.data.begin() + s * c * 3, c * 3, 1.0 / static_cast<double>(count));
    for (std::size_t node = offsets[s]; node < offsets[s + 1]; ++node) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t k = 0; k < 3; ++k) {
          pick.push_back(static_cast<std::uint32_t>((node * c + ch) * kBladeCount + 1 + k));
          seg.push_back(static_cast<std::uint32_t>((s * c + ch) * 3 + k));
        }
      }
    }
  }
  back = seg;
  put = pick;
  const std::size_t picked = pick.size();
  Var g1 = gather(x, make_index(std::move(pick)), {picked});
  Var means = scatter_add(g1, make_index(std::move(seg)), {n_seg * c * 3}) * constant(inv_count);
  Var spread = gather(means, make_index(std::move(back)), {picked});
  return x - scatter_add(spread, make_index(std::move(put)), x.shape());
}

MultivectorField grade_linear(const MultivectorField& x, const Tensor& w) {
  return MultivectorField::from_tensor(grade_linear(constant(x.to_tensor()), constant(w)).value());
}

MultivectorField geometric_product_layer(const MultivectorField& x, const MultivectorField& y,
                                         const Tensor& mix) {
  return MultivectorField::from_tensor(
      geometric_product_layer(constant(x.to_tensor()), constant(y.to_tensor()), constant(mix)).value());
}

Tensor multivector_norm_features(const MultivectorField& x) {
  return multivector_norm_features(constant(x.to_tensor())).value();
}

// ---- networks -------------------------------------------------------------

EdgeGeometry edge_geometry(const Tensor& x_values, const GraphTopology& topo) {
  if (x_values.shape.size() != 3 || x_values.shape[2] != kBladeCount ||
      x_values.shape[0] != topo.n_nodes()) {
    throw std::invalid_argument("edge_geometry: field " + shape_str(x_values.shape) +
                                " does not match a graph of " + std::to_string(topo.n_nodes()) +
                                " nodes");
  }
  const std::size_t stride = x_values.shape[1] * kBladeCount;
  const std::size_t e_count = topo.n_edges();
  Tensor rel({e_count, 1, kBladeCount});
  Tensor norms({e_count, static_cast<std::size_t>(kGradeCount)});
  for (std::size_t e = 0; e < e_count; ++e) {
    const std::size_t i = topo.receivers()[e];
    const std::size_t j = topo.senders()[e];
    double d[3];
    double len2 = 0.0;
    for (int k = 0; k < 3; ++k) {
      d[k] = x_values.data[i * stride + 1 + k] - x_values.data[j * stride + 1 + k];
      len2 += d[k] * d[k];
    }
    const double len = std::sqrt(len2);
    const double shrink = 1.0 / (1.0 + len);
    for (int k = 0; k < 3; ++k) rel.data[e * kBladeCount + 1 + k] = d[k] * shrink;
    // Bounded radial encodings: unbounded gate inputs make the network a
    // high-degree polynomial in the positions, which the sampler amplifies.
    double* f = norms.data.data() + e * kGradeCount;
    f[0] = len * shrink;
    f[1] = std::exp(-len);
    f[2] = std::exp(-len2);
    f[3] = 1.0 / (1.0 + len2);
  }
  return {constant(std::move(rel)), constant(std::move(norms))};
}

void init_egnn_layer(ParamStore& store, const std::string& prefix, const NetConfig& cfg, Rng& rng) {
  const std::size_t c = cfg.mv_channels;
  const std::size_t h = cfg.scalar_hidden;
  add_grade_linear(store, prefix + ".recv.w", c, c, rng);
  add_grade_linear(store, prefix + ".send.w", c, c, rng);
  add_grade_linear(store, prefix + ".rel.w", 1, c, rng);
  store.add(prefix + ".gp.mix", normal_tensor({kGradeCount, kGradeCount, kGradeCount, c}, 0.5, rng));
  add_linear(store, prefix + ".edge_mlp.l1", 2 * h + kGradeCount, h, rng);
  add_linear(store, prefix + ".edge_mlp.l2", h, c * kGradeCount, rng);
  add_linear(store, prefix + ".node_mlp.l1", 2 * h, h, rng);
  add_linear(store, prefix + ".node_mlp.l2", h, h, rng);
  add_grade_linear(store, prefix + ".grade_linear.w", c, c, rng);
}

std::pair<Var, Var> clifford_egnn_layer(const Var& x, const Var& h, const EdgeGeometry& geo,
                                        const GraphTopology& topo, ParamBinding& params,
                                        const std::string& prefix, const NetConfig& cfg) {
  require_field_shape(x, "clifford_egnn_layer");
  const std::size_t n = topo.n_nodes();
  const std::size_t c = cfg.mv_channels;
  const std::size_t e_count = topo.n_edges();
  if (x.shape()[0] != n || h.shape().size() != 2 || h.shape()[0] != n) {
    throw std::invalid_argument("clifford_egnn_layer: inputs " + shape_str(x.shape()) + " / " +
                                shape_str(h.shape()) + " do not match a graph of " +
                                std::to_string(n) + " nodes");
  }
  auto P = [&](const char* name) { return params(prefix + name); };

  Var a = gather_rows(grade_linear(x, P(".recv.w")), topo.receivers()) +
          gather_rows(grade_linear(x, P(".send.w")), topo.senders());
  Var r = grade_linear(geo.rel_hat, P(".rel.w"));
  Var product = geometric_product_layer(a, r, P(".gp.mix"));

  Var s_in = concat({gather_rows(h, topo.receivers()), gather_rows(h, topo.senders()), geo.norms});
  Var s = silu(linear(s_in, P(".edge_mlp.l1.w"), P(".edge_mlp.l1.b")));
  Var gate = linear(s, P(".edge_mlp.l2.w"), P(".edge_mlp.l2.b"));  // [E, c * 4]

  Index expand;
  expand.reserve(e_count * c * kBladeCount);
  for (std::size_t e = 0; e < e_count; ++e)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t b = 0; b < kBladeCount; ++b)
        expand.push_back(static_cast<std::uint32_t>((e * c + ch) * kGradeCount + kBladeGrade[b]));
  Var messages = product * gather(gate, make_index(std::move(expand)), {e_count, c, kBladeCount});

  Var x_out = x + grade_linear(mean_aggregate(messages, topo), P(".grade_linear.w"));
  Var h_update = linear(silu(linear(concat({h, mean_aggregate(s, topo)}), P(".node_mlp.l1.w"),
                                    P(".node_mlp.l1.b"))),
                        P(".node_mlp.l2.w"), P(".node_mlp.l2.b"));
  return {x_out, h + h_update};
}

void init_denoiser_params(ParamStore& store, const NetConfig& cfg, Rng& rng) {
  init_network(store, "denoiser", kDenoiserScalarIn, cfg, rng);
  add_linear(store, "denoiser.out_h", cfg.scalar_hidden, kAtomFeatures, rng);
}

void init_encoder_params(ParamStore& store, const NetConfig& cfg, Rng& rng) {
  init_network(store, "encoder", kAtomFeatures, cfg, rng);
}

DenoiserOutput denoiser_forward(const Var& z_x, const Var& h, const std::vector<double>& t_frac,
                                const BatchLayout& layout, ParamBinding& params,
                                const NetConfig& cfg) {
  const std::size_t n = layout.n_nodes();
  if (z_x.shape() != Shape{n, 1, kBladeCount} || h.shape() != Shape{n, kAtomFeatures}) {
    throw std::invalid_argument("denoiser: inputs " + shape_str(z_x.shape()) + " / " +
                                shape_str(h.shape()) + " do not match " + std::to_string(n) +
                                " nodes");
  }
  if (t_frac.size() != layout.n_molecules()) {
    throw std::invalid_argument("denoiser: one timestep per molecule required");
  }
  Tensor t_col({n, 1});
  for (std::size_t m = 0; m < layout.n_molecules(); ++m)
    for (std::size_t i = layout.offsets[m]; i < layout.offsets[m + 1]; ++i) t_col.data[i] = t_frac[m];

  const GraphTopology& topo = layout.topology;
  EdgeGeometry geo = edge_geometry(z_x.value(), topo);
  Var x = lift_inputs(z_x, "denoiser", params);
  Var hh = linear(concat({h, constant(std::move(t_col))}), params("denoiser.embed_h.w"),
                  params("denoiser.embed_h.b"));
  hh = run_layers(x, hh, geo, topo, params, "denoiser", cfg);

  Var eps_x = com_project_grade1(grade_linear(x, params("denoiser.out_x.w")), layout.offsets);
  Var eps_h = linear(hh, params("denoiser.out_h.w"), params("denoiser.out_h.b"));
  return {eps_x, eps_h};
}

std::pair<MultivectorField, NodeScalars> denoiser_forward(const MultivectorField& z,
                                                          const NodeScalars& h, int t, int T,
                                                          const GraphTopology& topo,
                                                          const ParamStore& params,
                                                          const NetConfig& cfg) {
  if (t < 1 || t > T) {
    throw std::out_of_range("denoiser: timestep " + std::to_string(t) + " outside [1, " +
                            std::to_string(T) + "]");
  }
  BatchLayout layout{single_molecule_offsets(topo.n_nodes()), topo};
  ParamBinding binding(params, false);
  DenoiserOutput out =
      denoiser_forward(constant(z.to_tensor()), constant(h.to_tensor()),
                       {static_cast<double>(t) / static_cast<double>(T)}, layout, binding, cfg);
  return {MultivectorField::from_tensor(out.eps_x.value()), NodeScalars::from_tensor(out.eps_h.value())};
}

Var encoder_forward(const Tensor& positions, const Var& h, const BatchLayout& layout,
                    ParamBinding& params, const NetConfig& cfg) {
  const std::size_t n = layout.n_nodes();
  if (positions.shape != Shape{n, 3} || h.shape() != Shape{n, kAtomFeatures}) {
    throw std::invalid_argument("encoder: inputs " + shape_str(positions.shape) + " / " +
                                shape_str(h.shape()) + " do not match " + std::to_string(n) +
                                " nodes");
  }
  Tensor embedded({n, 1, kBladeCount});
  Tensor keep({n, 1, kBladeCount}, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < 3; ++k) {
      embedded.data[i * kBladeCount + 1 + k] = positions.data[i * 3 + k];
      keep.data[i * kBladeCount + 1 + k] = 0.0;
    }
  }
  Var embedded_var = constant(embedded);
  EdgeGeometry geo = edge_geometry(embedded, layout.topology);
  Var x = lift_inputs(embedded_var, "encoder", params);
  Var hh = linear(h, params("encoder.embed_h.w"), params("encoder.embed_h.b"));
  run_layers(x, hh, geo, layout.topology, params, "encoder", cfg);
  Var latent = grade_linear(x, params("encoder.out_x.w"));
  // The grade-1 slot is overwritten with the exact coordinates.
  return latent * constant(std::move(keep)) + embedded_var;
}

MultivectorField encoder_forward(const std::vector<Vec3>& positions, const NodeScalars& h,
                                 const GraphTopology& topo, const ParamStore& params,
                                 const NetConfig& cfg) {
  Tensor pos({positions.size(), 3});
  for (std::size_t i = 0; i < positions.size(); ++i)
    for (std::size_t k = 0; k < 3; ++k) pos.data[i * 3 + k] = positions[i][k];
  BatchLayout layout{single_molecule_offsets(topo.n_nodes()), topo};
  ParamBinding binding(params, false);
  return MultivectorField::from_tensor(
      encoder_forward(pos, constant(h.to_tensor()), layout, binding, cfg).value());
}

}  // namespace cdm
