#pragma once

// Minimal reverse-mode differentiation over dense row-major double tensors.
//
// A Var is a handle to a node in a dynamically built computation graph. Ops
// record a backward closure only when at least one input requires a
// gradient, so evaluating a network with a non-differentiable ParamBinding
// costs no more than a plain forward pass. Graphs are independent objects
// with no global state: separate threads may build and differentiate
// separate graphs concurrently.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

namespace cdm {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0);
  /// Throws std::invalid_argument when data length disagrees with shape.
  Tensor(Shape s, std::vector<double> values);

  static Tensor scalar(double v) { return Tensor({}, std::vector<double>{v}); }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  bool all_finite() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

namespace detail {
struct Node;
}

class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape; }
  std::size_t size() const { return value().size(); }
  bool requires_grad() const;
  bool defined() const { return static_cast<bool>(node_); }
  /// Gradient accumulated by the last backward pass (zeros if none).
  Tensor grad() const;

 private:
  explicit Var(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;

  friend Var make_var(std::shared_ptr<detail::Node> node);
  friend const std::shared_ptr<detail::Node>& node_ptr(const Var& v);
};

using Index = std::vector<std::uint32_t>;
using IndexPtr = std::shared_ptr<const Index>;

inline IndexPtr make_index(Index idx) { return std::make_shared<const Index>(std::move(idx)); }

/// Leaf that never receives a gradient.
Var constant(Tensor t);
/// Leaf that accumulates a gradient.
Var variable(Tensor t);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator*(const Var& a, double s) { return scale(a, s); }

/// [m, k] x [k, n] -> [m, n].
Var matmul(const Var& a, const Var& b);
/// Shape S -> [rows, S...], repeating the input along a new leading axis.
Var broadcast_rows(const Var& a, std::size_t rows);
/// Concatenate along the last axis. All inputs share every other extent.
Var concat(const std::vector<Var>& parts);
Var sum(const Var& a);
Var mean(const Var& a);
/// x * sigmoid(x).
Var silu(const Var& a);
/// Elementwise square root of a non-negative tensor; gradient 0 at 0.
Var sqrt(const Var& a);
/// mean((a - b)^2) as a scalar.
Var mse(const Var& a, const Var& b);
/// out.flat[k] = a.flat[idx[k]]; out has `out_shape` (numel == idx.size()).
Var gather(const Var& a, IndexPtr idx, Shape out_shape);
/// out.flat[idx[k]] += a.flat[k]; out has `out_shape`, zero-initialised.
Var scatter_add(const Var& a, IndexPtr idx, Shape out_shape);
Var reshape(const Var& a, Shape shape);

/// Runs reverse accumulation from a scalar. Throws std::invalid_argument for
/// a non-scalar, std::domain_error for a non-finite value.
void backward(const Var& loss);

/// Named parameter tensors, iterated in insertion order.
class ParamStore {
 public:
  void add(const std::string& name, Tensor t);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Tensor& get(const std::string& name) const;
  Tensor& get_mut(const std::string& name);
  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return names_.size(); }
  std::size_t parameter_count() const;

  friend bool operator==(const ParamStore& a, const ParamStore& b);

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
  std::unordered_map<std::string, std::size_t> index_;
};

using GradMap = std::map<std::string, Tensor>;

/// Exposes ParamStore entries as graph leaves, one leaf per name per binding.
class ParamBinding {
 public:
  explicit ParamBinding(const ParamStore& store, bool requires_grad = true)
      : store_(&store), requires_grad_(requires_grad) {}

  Var operator()(const std::string& name);
  const ParamStore& store() const { return *store_; }
  bool requires_grad() const { return requires_grad_; }

 private:
  const ParamStore* store_;
  bool requires_grad_;
  std::unordered_map<std::string, Var> leaves_;

  friend GradMap gradients(const Var& loss, const ParamBinding& binding);
};

/// d loss / d param for every parameter of the bound store; zeros for
/// parameters the loss does not reach.
GradMap gradients(const Var& loss, const ParamBinding& binding);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::uint64_t step = 0;
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
};

/// One bias-corrected Adam update. Returns the new parameters; `state` is
/// advanced in place. Throws std::invalid_argument if a gradient is missing
/// or mis-shaped.
ParamStore adam_step(const ParamStore& params, const GradMap& grads, AdamState& state,
                     const AdamConfig& config);

}  // namespace cdm
