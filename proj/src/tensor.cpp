#include "imunet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "gemm.hpp"

namespace imunet {

std::int64_t shape_numel(const std::vector<std::int64_t>& shape) {
  std::int64_t n = 1;
  for (std::int64_t d : shape) {
    if (d <= 0) throw DimensionError("non-positive dimension in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const std::vector<std::int64_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor(std::vector<std::int64_t> s, std::vector<double> d)
    : shape(std::move(s)), data(std::move(d)) {
  if (shape_numel(shape) != static_cast<std::int64_t>(data.size())) {
    throw DimensionError("data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
  }
}

Tensor Tensor::full(std::vector<std::int64_t> s, double value) {
  Tensor t(std::move(s));
  std::fill(t.data.begin(), t.data.end(), value);
  return t;
}

Tensor Tensor::randn(std::vector<std::int64_t> s, Rng& rng, double stddev) {
  Tensor t(std::move(s));
  for (double& v : t.data) v = stddev * rng.gaussian();
  return t;
}

Tensor& Node::ensure_grad() {
  if (grad.data.empty()) grad = Tensor(value.shape);
  return grad;
}

void Node::zero_grad() {
  if (!grad.data.empty()) std::fill(grad.data.begin(), grad.data.end(), 0.0);
}

NodePtr make_const(Tensor v) { return std::make_shared<Node>(std::move(v), false); }

NodePtr make_param(Tensor v) { return std::make_shared<Node>(std::move(v), true); }

namespace {

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape) + " vs " +
                         shape_str(b.shape));
  }
}

NodePtr make_op(Tensor out, std::initializer_list<NodePtr> parents) {
  bool rg = false;
  for (const NodePtr& p : parents) rg = rg || p->requires_grad;
  auto n = std::make_shared<Node>(std::move(out), rg);
  if (rg) n->parents.assign(parents.begin(), parents.end());
  return n;
}

}  // namespace

NodePtr add(const NodePtr& a, const NodePtr& b) {
  check_same_shape("add", a->value, b->value);
  Tensor out(a->value.shape);
  const std::size_t n = out.data.size();
  for (std::size_t i = 0; i < n; ++i) out.data[i] = a->value.data[i] + b->value.data[i];
  NodePtr node = make_op(std::move(out), {a, b});
  if (node->requires_grad) {
    Node* self = node.get();
    node->backprop = [self, a, b] {
      if (a->requires_grad) {
        Tensor& ga = a->ensure_grad();
        for (std::size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += self->grad.data[i];
      }
      if (b->requires_grad) {
        Tensor& gb = b->ensure_grad();
        for (std::size_t i = 0; i < gb.data.size(); ++i) gb.data[i] += self->grad.data[i];
      }
    };
  }
  return node;
}

NodePtr sub(const NodePtr& a, const NodePtr& b) {
  check_same_shape("sub", a->value, b->value);
  Tensor out(a->value.shape);
  const std::size_t n = out.data.size();
  for (std::size_t i = 0; i < n; ++i) out.data[i] = a->value.data[i] - b->value.data[i];
  NodePtr node = make_op(std::move(out), {a, b});
  if (node->requires_grad) {
    Node* self = node.get();
    node->backprop = [self, a, b] {
      if (a->requires_grad) {
        Tensor& ga = a->ensure_grad();
        for (std::size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += self->grad.data[i];
      }
      if (b->requires_grad) {
        Tensor& gb = b->ensure_grad();
        for (std::size_t i = 0; i < gb.data.size(); ++i) gb.data[i] -= self->grad.data[i];
      }
    };
  }
  return node;
}

NodePtr mul(const NodePtr& a, const NodePtr& b) {
  check_same_shape("mul", a->value, b->value);
  Tensor out(a->value.shape);
  const std::size_t n = out.data.size();
  for (std::size_t i = 0; i < n; ++i) out.data[i] = a->value.data[i] * b->value.data[i];
  NodePtr node = make_op(std::move(out), {a, b});
  if (node->requires_grad) {
    Node* self = node.get();
    node->backprop = [self, a, b] {
      if (a->requires_grad) {
        Tensor& ga = a->ensure_grad();
        for (std::size_t i = 0; i < ga.data.size(); ++i)
          ga.data[i] += self->grad.data[i] * b->value.data[i];
      }
      if (b->requires_grad) {
        Tensor& gb = b->ensure_grad();
        for (std::size_t i = 0; i < gb.data.size(); ++i)
          gb.data[i] += self->grad.data[i] * a->value.data[i];
      }
    };
  }
  return node;
}

NodePtr scale(const NodePtr& a, double s) {
  Tensor out(a->value.shape);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = a->value.data[i] * s;
  NodePtr node = make_op(std::move(out), {a});
  if (node->requires_grad) {
    Node* self = node.get();
    node->backprop = [self, a, s] {
      Tensor& ga = a->ensure_grad();
      for (std::size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += self->grad.data[i] * s;
    };
  }
  return node;
}

NodePtr exp(const NodePtr& a) {
  Tensor out(a->value.shape);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = std::exp(a->value.data[i]);
  NodePtr node = make_op(std::move(out), {a});
  if (node->requires_grad) {
    Node* self = node.get();
    node->backprop = [self, a] {
      // d/dx exp(x) = exp(x), already computed as the forward value.
      Tensor& ga = a->ensure_grad();
      for (std::size_t i = 0; i < ga.data.size(); ++i)
        ga.data[i] += self->grad.data[i] * self->value.data[i];
    };
  }
  return node;
}

NodePtr max0(const NodePtr& a) {
  Tensor out(a->value.shape);
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = a->value.data[i] > 0.0 ? a->value.data[i] : 0.0;
  NodePtr node = make_op(std::move(out), {a});
  if (node->requires_grad) {
    Node* self = node.get();
    node->backprop = [self, a] {
      // Subgradient 0 at the kink.
      Tensor& ga = a->ensure_grad();
      for (std::size_t i = 0; i < ga.data.size(); ++i)
        if (a->value.data[i] > 0.0) ga.data[i] += self->grad.data[i];
    };
  }
  return node;
}

NodePtr matmul(const NodePtr& a, const NodePtr& b) {
  const Tensor& av = a->value;
  const Tensor& bv = b->value;
  if (av.rank() != 2 || bv.rank() != 2 || av.shape[1] != bv.shape[0]) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(av.shape) + " vs " +
                         shape_str(bv.shape));
  }
  const std::int64_t m = av.shape[0], k = av.shape[1], n = bv.shape[1];
  Tensor out({m, n});
  detail::gemm(false, false, m, n, k, 1.0, av.data.data(), k, bv.data.data(), n, 0.0,
               out.data.data(), n);
  NodePtr node = make_op(std::move(out), {a, b});
  if (node->requires_grad) {
    Node* self = node.get();
    node->backprop = [self, a, b, m, k, n] {
      if (a->requires_grad) {
        // dA += dC * B^T
        Tensor& ga = a->ensure_grad();
        detail::gemm(false, true, m, k, n, 1.0, self->grad.data.data(), n,
                     b->value.data.data(), n, 1.0, ga.data.data(), k);
      }
      if (b->requires_grad) {
        // dB += A^T * dC
        Tensor& gb = b->ensure_grad();
        detail::gemm(true, false, k, n, m, 1.0, a->value.data.data(), k,
                     self->grad.data.data(), n, 1.0, gb.data.data(), n);
      }
    };
  }
  return node;
}

NodePtr sum(const NodePtr& a) {
  double total = 0.0;
  for (double v : a->value.data) total += v;
  NodePtr node = make_op(Tensor({1}, {total}), {a});
  if (node->requires_grad) {
    Node* self = node.get();
    node->backprop = [self, a] {
      Tensor& ga = a->ensure_grad();
      const double g = self->grad.data[0];
      for (std::size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += g;
    };
  }
  return node;
}

namespace {

// Iterative post-order DFS over parents; returns nodes with every node
// appearing after all of its children-in-graph (i.e. reverse order is a valid
// backward schedule from the root).
std::vector<Node*> topo_order(const NodePtr& root) {
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  struct Frame {
    Node* node;
    std::size_t next_parent;
  };
  std::vector<Frame> stack{{root.get(), 0}};
  visited.insert(root.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      Node* p = f.node->parents[f.next_parent++].get();
      if (visited.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }
  return order;
}

}  // namespace

void backward(const NodePtr& loss) {
  if (loss->value.numel() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " +
                        shape_str(loss->value.shape));
  }
  std::vector<Node*> order = topo_order(loss);
  // Interior gradients are per-pass scratch: reset them so a repeated backward
  // accumulates into leaf gradients only (never double-counts through the
  // interior). Leaves keep whatever they hold, which is the accumulation rule.
  for (Node* n : order) {
    if (n->backprop) n->zero_grad();
  }
  loss->ensure_grad().data[0] += 1.0;
  // Post-order means parents precede children in `order`; walk it backwards so
  // every node's gradient is complete before it is propagated.
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->requires_grad && n->backprop) {
      n->ensure_grad();
      n->backprop();
    }
  }
}

void zero_grads(const NodePtr& root) {
  for (Node* n : topo_order(root)) n->zero_grad();
}

}  // namespace imunet
