#pragma once

// Clifford-group equivariant layers and the two networks built from them:
// the noise predictor (denoiser) and the all-grade latent encoder.
//
// Layer recipe (per edge i <- j):
//   a_ij = W_recv x_i + W_send x_j                         (grade_linear)
//   r_ij = W_rel rhat_ij,  rhat_ij = (p_i - p_j) / (1 + |p_i - p_j|)
//   s_ij = silu(MLP_1[h_i, h_j, radial encodings of |p_i - p_j|])
//   m_ij = gate(s_ij) * GP(a_ij, r_ij)                      (per channel, per grade)
//   x_i += W_out mean_j m_ij,   h_i += MLP_2[h_i, mean_j s_ij]
// Every x-path is built from grade_linear, the geometric product, and
// multiplication by invariant scalars, so the layer commutes with the O(3)
// action on all grades. Positions p enter only through differences.

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cdm/autodiff.hpp"
#include "cdm/clifford.hpp"
#include "cdm/rng.hpp"

namespace cdm {

/// n_nodes x n_channels multivectors, row-major with the blade index fastest.
struct MultivectorField {
  std::size_t n_nodes = 0;
  std::size_t n_channels = 0;
  std::vector<double> values;

  MultivectorField() = default;
  MultivectorField(std::size_t nodes, std::size_t channels)
      : n_nodes(nodes), n_channels(channels), values(nodes * channels * kBladeCount, 0.0) {}

  double& operator()(std::size_t n, std::size_t c, std::size_t b) {
    return values[(n * n_channels + c) * kBladeCount + b];
  }
  double operator()(std::size_t n, std::size_t c, std::size_t b) const {
    return values[(n * n_channels + c) * kBladeCount + b];
  }
  Multivector at(std::size_t n, std::size_t c) const;
  void set(std::size_t n, std::size_t c, const Multivector& v);

  bool all_finite() const;
  Tensor to_tensor() const;
  /// Throws std::invalid_argument unless the tensor is [n, c, 8].
  static MultivectorField from_tensor(const Tensor& t);

  friend bool operator==(const MultivectorField&, const MultivectorField&) = default;
};

/// n_nodes x n_feat invariant features.
struct NodeScalars {
  std::size_t n_nodes = 0;
  std::size_t n_feat = 0;
  std::vector<double> values;

  NodeScalars() = default;
  NodeScalars(std::size_t nodes, std::size_t feat)
      : n_nodes(nodes), n_feat(feat), values(nodes * feat, 0.0) {}

  double& operator()(std::size_t n, std::size_t f) { return values[n * n_feat + f]; }
  double operator()(std::size_t n, std::size_t f) const { return values[n * n_feat + f]; }

  Tensor to_tensor() const;
  static NodeScalars from_tensor(const Tensor& t);

  friend bool operator==(const NodeScalars&, const NodeScalars&) = default;
};

MultivectorField apply_orthogonal(const OrthogonalAction& action, const MultivectorField& field);

/// Directed edge list without self-loops; both directions of every
/// connection are present.
class GraphTopology {
 public:
  struct Edge {
    std::uint32_t receiver;
    std::uint32_t sender;
  };

  GraphTopology() = default;
  /// Throws std::invalid_argument on self-loops, out-of-range nodes, or a
  /// missing reverse edge.
  GraphTopology(std::size_t n_nodes, std::vector<Edge> edges);

  static GraphTopology fully_connected(std::size_t n_nodes);
  /// Block-diagonal union of fully connected graphs of the given sizes.
  static GraphTopology disjoint_cliques(const std::vector<std::size_t>& sizes);

  std::size_t n_nodes() const { return n_nodes_; }
  std::size_t n_edges() const { return edges_.size(); }
  const std::vector<Edge>& edges() const { return edges_; }
  const std::vector<std::uint32_t>& receivers() const { return receivers_; }
  const std::vector<std::uint32_t>& senders() const { return senders_; }
  /// In-degree of each node.
  const std::vector<std::size_t>& degree() const { return degree_; }

 private:
  std::size_t n_nodes_ = 0;
  std::vector<Edge> edges_;
  std::vector<std::uint32_t> receivers_;
  std::vector<std::uint32_t> senders_;
  std::vector<std::size_t> degree_;
};

/// Several molecules packed into one graph. offsets has n_molecules + 1
/// entries; molecule k owns nodes [offsets[k], offsets[k+1]).
struct BatchLayout {
  std::vector<std::size_t> offsets;
  GraphTopology topology;

  static BatchLayout for_sizes(const std::vector<std::size_t>& sizes);
  std::size_t n_molecules() const { return offsets.size() - 1; }
  std::size_t n_nodes() const { return offsets.back(); }
};

// ---- differentiable primitives --------------------------------------------

/// x: [n, c_in, 8], w: [4, c_in, c_out] -> [n, c_out, 8]. Each output
/// grade-m slice is a weighted sum of input grade-m slices.
Var grade_linear(const Var& x, const Var& w);
/// x, y: [n, c, 8], mix: [4, 4, 4, c] indexed (grade_x, grade_y, grade_out, c).
/// out[n, c] = sum_{i,j,k} mix[i,j,k,c] <<x>_i <y>_j>_k.
Var geometric_product_layer(const Var& x, const Var& y, const Var& mix);
/// x: [n, c, 8] -> [n, c * 4]: per channel, the Euclidean norm of each grade.
Var multivector_norm_features(const Var& x);
/// Rows of a [n, ...] tensor selected by `rows` -> [rows.size(), ...].
Var gather_rows(const Var& x, const std::vector<std::uint32_t>& rows);
/// Sum of [E, ...] rows into their target rows of a zero [n, ...] tensor.
Var scatter_rows(const Var& x, const std::vector<std::uint32_t>& rows, std::size_t n);
/// x [r, in] * w [in, out] + b [out].
Var linear(const Var& x, const Var& w, const Var& b);
/// Subtracts, per molecule and channel, the node mean of the grade-1 slice.
Var com_project_grade1(const Var& x, const std::vector<std::size_t>& offsets);

// Value-level conveniences over the differentiable primitives.
MultivectorField grade_linear(const MultivectorField& x, const Tensor& w);
MultivectorField geometric_product_layer(const MultivectorField& x, const MultivectorField& y,
                                         const Tensor& mix);
/// [n, c * 4] grade norms.
Tensor multivector_norm_features(const MultivectorField& x);

// ---- networks -------------------------------------------------------------

struct NetConfig {
  std::size_t layers = 4;
  std::size_t mv_channels = 16;
  std::size_t scalar_hidden = 64;
};

/// Width of the per-node invariant input: atom-type one-hot (5), charge,
/// and for the denoiser the normalised timestep.
inline constexpr std::size_t kAtomFeatures = 6;
inline constexpr std::size_t kDenoiserScalarIn = kAtomFeatures + 1;

/// Invariant and equivariant edge inputs derived from node positions.
struct EdgeGeometry {
  Var rel_hat;  ///< [E, 1, 8] rescaled relative one-vectors
  Var norms;    ///< [E, 4] bounded encodings of |p_i - p_j|, each in [0, 1]
};

/// Positions are the grade-1 slice of channel 0 of `x_values` ([n, c, 8]).
EdgeGeometry edge_geometry(const Tensor& x_values, const GraphTopology& topo);

/// Adds one message-passing layer's parameters under `prefix`.
void init_egnn_layer(ParamStore& store, const std::string& prefix, const NetConfig& cfg, Rng& rng);

std::pair<Var, Var> clifford_egnn_layer(const Var& x, const Var& h, const EdgeGeometry& geo,
                                        const GraphTopology& topo, ParamBinding& params,
                                        const std::string& prefix, const NetConfig& cfg);

void init_denoiser_params(ParamStore& store, const NetConfig& cfg, Rng& rng);
void init_encoder_params(ParamStore& store, const NetConfig& cfg, Rng& rng);

struct DenoiserOutput {
  Var eps_x;  ///< [N, 1, 8], grade-1 slice CoM-projected per molecule
  Var eps_h;  ///< [N, kAtomFeatures]
};

/// z_x: [N, 1, 8] noisy multivectors, h: [N, kAtomFeatures] noisy features,
/// t_frac: t / T per molecule.
DenoiserOutput denoiser_forward(const Var& z_x, const Var& h, const std::vector<double>& t_frac,
                                const BatchLayout& layout, ParamBinding& params,
                                const NetConfig& cfg);

/// Field-level entry point for a single graph. Throws std::out_of_range
/// unless 1 <= t <= T.
std::pair<MultivectorField, NodeScalars> denoiser_forward(const MultivectorField& z,
                                                          const NodeScalars& h, int t, int T,
                                                          const GraphTopology& topo,
                                                          const ParamStore& params,
                                                          const NetConfig& cfg);

/// positions: [N, 3] CoM-centred, h: [N, kAtomFeatures]. Returns the latent
/// [N, 1, 8] whose grade-1 slice is exactly the input positions.
Var encoder_forward(const Tensor& positions, const Var& h, const BatchLayout& layout,
                    ParamBinding& params, const NetConfig& cfg);

MultivectorField encoder_forward(const std::vector<Vec3>& positions, const NodeScalars& h,
                                 const GraphTopology& topo, const ParamStore& params,
                                 const NetConfig& cfg);

}  // namespace cdm
