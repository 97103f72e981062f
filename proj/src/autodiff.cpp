#include "cdm/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace cdm {

namespace detail {

struct Node {
  Tensor value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
};

}  // namespace detail

using detail::Node;

Var make_var(std::shared_ptr<Node> node) { return Var(std::move(node)); }

const std::shared_ptr<Node>& node_ptr(const Var& v) {
  if (!v.node_) throw std::logic_error("use of an undefined Var");
  return v.node_;
}

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " + shape_str(a) +
                              " and " + shape_str(b));
}

Node& N(const Var& v) { return *node_ptr(v); }

// The backward closure is kept only if some parent takes part in
// differentiation; otherwise the result is a plain constant.
Var make_result(Tensor value, std::vector<std::shared_ptr<Node>> parents,
                std::function<void(Node&)> fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  const bool any = std::any_of(parents.begin(), parents.end(),
                               [](const auto& p) { return p->requires_grad; });
  if (any) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward = std::move(fn);
  }
  return make_var(std::move(node));
}

Var make_leaf(Tensor t, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->value = std::move(t);
  node->requires_grad = requires_grad;
  return make_var(std::move(node));
}

// Accumulation target for a parent, or nullptr if it takes no gradient.
double* grad_target(Node& n) { return n.requires_grad ? n.grad.data() : nullptr; }

}  // namespace

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

Tensor::Tensor(Shape s, double fill) : shape(std::move(s)), data(shape_numel(shape), fill) {}

Tensor::Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
  if (data.size() != shape_numel(shape)) {
    throw std::invalid_argument("tensor: data length " + std::to_string(data.size()) +
                                " does not match shape " + shape_str(shape));
  }
}

bool Tensor::all_finite() const {
  return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
}

const Tensor& Var::value() const { return N(*this).value; }
bool Var::requires_grad() const { return N(*this).requires_grad; }

Tensor Var::grad() const {
  const Node& n = N(*this);
  if (n.grad.empty()) return Tensor(n.value.shape, 0.0);
  return Tensor(n.value.shape, n.grad);
}

Var constant(Tensor t) { return make_leaf(std::move(t), false); }
Var variable(Tensor t) { return make_leaf(std::move(t), true); }

Var add(const Var& a, const Var& b) {
  if (a.shape() != b.shape()) shape_error("add", a.shape(), b.shape());
  Tensor out = a.value();
  const auto& bv = b.value().data;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += bv[i];
  return make_result(std::move(out), {node_ptr(a), node_ptr(b)}, [](Node& self) {
    for (int k = 0; k < 2; ++k) {
      if (double* g = grad_target(*self.parents[k])) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
      }
    }
  });
}

Var sub(const Var& a, const Var& b) {
  if (a.shape() != b.shape()) shape_error("sub", a.shape(), b.shape());
  Tensor out = a.value();
  const auto& bv = b.value().data;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= bv[i];
  return make_result(std::move(out), {node_ptr(a), node_ptr(b)}, [](Node& self) {
    if (double* g = grad_target(*self.parents[0])) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (double* g = grad_target(*self.parents[1])) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  if (a.shape() != b.shape()) shape_error("mul", a.shape(), b.shape());
  Tensor out = a.value();
  const auto& bv = b.value().data;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= bv[i];
  return make_result(std::move(out), {node_ptr(a), node_ptr(b)}, [](Node& self) {
    const auto& av = self.parents[0]->value.data;
    const auto& bv = self.parents[1]->value.data;
    if (double* g = grad_target(*self.parents[0])) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (double* g = grad_target(*self.parents[1])) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * av[i];
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a.value();
  for (double& v : out.data) v *= s;
  return make_result(std::move(out), {node_ptr(a)}, [s](Node& self) {
    if (double* g = grad_target(*self.parents[0])) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += s * self.grad[i];
    }
  });
}

Var matmul(const Var& a, const Var& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() != 2 || bs.size() != 2 || as[1] != bs[0]) shape_error("matmul", as, bs);
  const auto m = static_cast<Eigen::Index>(as[0]);
  const auto k = static_cast<Eigen::Index>(as[1]);
  const auto n = static_cast<Eigen::Index>(bs[1]);
  Tensor out({as[0], bs[1]});
  MutMap(out.data.data(), m, n).noalias() =
      ConstMap(a.value().data.data(), m, k) * ConstMap(b.value().data.data(), k, n);
  return make_result(std::move(out), {node_ptr(a), node_ptr(b)}, [m, k, n](Node& self) {
    ConstMap g(self.grad.data(), m, n);
    if (double* ga = grad_target(*self.parents[0])) {
      MutMap(ga, m, k).noalias() += g * ConstMap(self.parents[1]->value.data.data(), k, n).transpose();
    }
    if (double* gb = grad_target(*self.parents[1])) {
      MutMap(gb, k, n).noalias() += ConstMap(self.parents[0]->value.data.data(), m, k).transpose() * g;
    }
  });
}

Var broadcast_rows(const Var& a, std::size_t rows) {
  Shape shape{rows};
  shape.insert(shape.end(), a.shape().begin(), a.shape().end());
  const std::size_t inner = a.size();
  Tensor out(shape);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy(a.value().data.begin(), a.value().data.end(), out.data.begin() + r * inner);
  }
  return make_result(std::move(out), {node_ptr(a)}, [rows, inner](Node& self) {
    if (double* g = grad_target(*self.parents[0])) {
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t i = 0; i < inner; ++i) g[i] += self.grad[r * inner + i];
    }
  });
}

Var concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (first.empty()) throw std::invalid_argument("concat: scalar inputs");
  const std::size_t outer = shape_numel(first) / first.back();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Var& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size() || !std::equal(s.begin(), s.end() - 1, first.begin())) {
      shape_error("concat", first, s);
    }
    widths.push_back(s.back());
    total += s.back();
  }
  Shape shape = first;
  shape.back() = total;
  Tensor out(shape);
  std::size_t col = 0;
  std::vector<std::shared_ptr<Node>> parents;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto& src = parts[p].value().data;
    for (std::size_t r = 0; r < outer; ++r) {
      std::copy_n(src.begin() + r * widths[p], widths[p], out.data.begin() + r * total + col);
    }
    col += widths[p];
    parents.push_back(node_ptr(parts[p]));
  }
  return make_result(std::move(out), std::move(parents), [outer, total, widths](Node& self) {
    std::size_t c = 0;
    for (std::size_t p = 0; p < widths.size(); ++p) {
      if (double* g = grad_target(*self.parents[p])) {
        for (std::size_t r = 0; r < outer; ++r)
          for (std::size_t j = 0; j < widths[p]; ++j)
            g[r * widths[p] + j] += self.grad[r * total + c + j];
      }
      c += widths[p];
    }
  });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data) s += v;
  return make_result(Tensor::scalar(s), {node_ptr(a)}, [](Node& self) {
    if (double* g = grad_target(*self.parents[0])) {
      const std::size_t n = self.parents[0]->value.size();
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[0];
    }
  });
}

Var mean(const Var& a) {
  if (a.size() == 0) throw std::invalid_argument("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Var silu(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.data) v = v / (1.0 + std::exp(-v));
  return make_result(std::move(out), {node_ptr(a)}, [](Node& self) {
    if (double* g = grad_target(*self.parents[0])) {
      const auto& x = self.parents[0]->value.data;
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double s = 1.0 / (1.0 + std::exp(-x[i]));
        g[i] += self.grad[i] * (s + x[i] * s * (1.0 - s));
      }
    }
  });
}

Var sqrt(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.data) {
    if (v < 0.0) throw std::domain_error("sqrt: negative input");
    v = std::sqrt(v);
  }
  return make_result(std::move(out), {node_ptr(a)}, [](Node& self) {
    if (double* g = grad_target(*self.parents[0])) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        const double y = self.value.data[i];
        if (y > 0.0) g[i] += self.grad[i] * 0.5 / y;
      }
    }
  });
}

Var mse(const Var& a, const Var& b) {
  if (a.shape() != b.shape()) shape_error("mse", a.shape(), b.shape());
  if (a.size() == 0) throw std::invalid_argument("mse: empty tensor");
  const auto& av = a.value().data;
  const auto& bv = b.value().data;
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) s += (av[i] - bv[i]) * (av[i] - bv[i]);
  const double inv_n = 1.0 / static_cast<double>(av.size());
  return make_result(Tensor::scalar(s * inv_n), {node_ptr(a), node_ptr(b)}, [inv_n](Node& self) {
    const auto& av = self.parents[0]->value.data;
    const auto& bv = self.parents[1]->value.data;
    const double c = 2.0 * inv_n * self.grad[0];
    if (double* g = grad_target(*self.parents[0])) {
      for (std::size_t i = 0; i < av.size(); ++i) g[i] += c * (av[i] - bv[i]);
    }
    if (double* g = grad_target(*self.parents[1])) {
      for (std::size_t i = 0; i < av.size(); ++i) g[i] -= c * (av[i] - bv[i]);
    }
  });
}

Var gather(const Var& a, IndexPtr idx, Shape out_shape) {
  if (shape_numel(out_shape) != idx->size()) {
    throw std::invalid_argument("gather: output shape " + shape_str(out_shape) +
                                " does not hold " + std::to_string(idx->size()) + " indices");
  }
  const auto& src = a.value().data;
  Tensor out(std::move(out_shape));
  for (std::size_t k = 0; k < idx->size(); ++k) {
    const std::uint32_t i = (*idx)[k];
    if (i >= src.size()) {
      throw std::out_of_range("gather: index " + std::to_string(i) + " outside tensor of shape " +
                              shape_str(a.shape()));
    }
    out.data[k] = src[i];
  }
  return make_result(std::move(out), {node_ptr(a)}, [idx](Node& self) {
    if (double* g = grad_target(*self.parents[0])) {
      for (std::size_t k = 0; k < idx->size(); ++k) g[(*idx)[k]] += self.grad[k];
    }
  });
}

Var scatter_add(const Var& a, IndexPtr idx, Shape out_shape) {
  if (a.size() != idx->size()) {
    throw std::invalid_argument("scatter_add: input shape " + shape_str(a.shape()) +
                                " does not match " + std::to_string(idx->size()) + " indices");
  }
  const auto& src = a.value().data;
  Tensor out(std::move(out_shape));
  for (std::size_t k = 0; k < idx->size(); ++k) {
    const std::uint32_t i = (*idx)[k];
    if (i >= out.data.size()) {
      throw std::out_of_range("scatter_add: index " + std::to_string(i) +
                              " outside output of shape " + shape_str(out.shape));
    }
    out.data[i] += src[k];
  }
  return make_result(std::move(out), {node_ptr(a)}, [idx](Node& self) {
    if (double* g = grad_target(*self.parents[0])) {
      for (std::size_t k = 0; k < idx->size(); ++k) g[k] += self.grad[(*idx)[k]];
    }
  });
}

Var reshape(const Var& a, Shape shape) {
  if (shape_numel(shape) != a.size()) shape_error("reshape", a.shape(), shape);
  Tensor out(std::move(shape), a.value().data);
  return make_result(std::move(out), {node_ptr(a)}, [](Node& self) {
    if (double* g = grad_target(*self.parents[0])) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

void backward(const Var& loss) {
  Node& root = N(loss);
  if (root.value.size() != 1 || !root.value.shape.empty()) {
    throw std::invalid_argument("backward: loss must be a scalar, got shape " +
                                shape_str(root.value.shape));
  }
  if (!std::isfinite(root.value.data[0])) throw std::domain_error("backward: non-finite loss");
  if (!root.requires_grad) return;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{&root, 0}};
  seen.insert(&root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (Node* n : order) n->grad.assign(n->value.size(), 0.0);
  root.grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }
}

void ParamStore::add(const std::string& name, Tensor t) {
  if (contains(name)) throw std::invalid_argument("param store: duplicate name '" + name + "'");
  index_.emplace(name, names_.size());
  names_.push_back(name);
  tensors_.push_back(std::move(t));
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("param store: no parameter '" + name + "'");
  return tensors_[it->second];
}

Tensor& ParamStore::get_mut(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("param store: no parameter '" + name + "'");
  return tensors_[it->second];
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor& t : tensors_) n += t.size();
  return n;
}

bool operator==(const ParamStore& a, const ParamStore& b) {
  return a.names_ == b.names_ && a.tensors_ == b.tensors_;
}

Var ParamBinding::operator()(const std::string& name) {
  auto it = leaves_.find(name);
  if (it != leaves_.end()) return it->second;
  Var leaf = make_leaf(store_->get(name), requires_grad_);
  leaves_.emplace(name, leaf);
  return leaf;
}

GradMap gradients(const Var& loss, const ParamBinding& binding) {
  for (const auto& [name, leaf] : binding.leaves_) N(leaf).grad.clear();
  backward(loss);
  GradMap out;
  for (const std::string& name : binding.store().names()) {
    auto it = binding.leaves_.find(name);
    out.emplace(name, it == binding.leaves_.end() ? Tensor(binding.store().get(name).shape, 0.0)
                                                  : it->second.grad());
  }
  return out;
}

ParamStore adam_step(const ParamStore& params, const GradMap& grads, AdamState& state,
                     const AdamConfig& config) {
  ParamStore out = params;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(config.beta1, t);
  const double bc2 = 1.0 - std::pow(config.beta2, t);
  for (const std::string& name : params.names()) {
    auto git = grads.find(name);
    if (git == grads.end()) throw std::invalid_argument("adam: missing gradient for '" + name + "'");
    const Tensor& g = git->second;
    Tensor& p = out.get_mut(name);
    if (g.shape != p.shape) shape_error("adam", p.shape, g.shape);
    auto [mit, m_new] = state.m.try_emplace(name, Tensor(p.shape, 0.0));
    auto [vit, v_new] = state.v.try_emplace(name, Tensor(p.shape, 0.0));
    auto& m = mit->second.data;
    auto& v = vit->second.data;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g.data[i];
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g.data[i] * g.data[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p.data[i] -= config.lr * mhat / (std::sqrt(vhat) + config.eps);
    }
  }
  return out;
}

}  // namespace cdm
