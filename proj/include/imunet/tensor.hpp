#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "imunet/errors.hpp"
#include "imunet/rng.hpp"

namespace imunet {

std::int64_t shape_numel(const std::vector<std::int64_t>& shape);
std::string shape_str(const std::vector<std::int64_t>& shape);

// Dense row-major array of 64-bit floats. Everything is double precision so
// the finite-difference tolerances used throughout the test suite are
// meaningful.
struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::int64_t> s)
      : shape(std::move(s)), data(static_cast<std::size_t>(shape_numel(shape)), 0.0) {}
  Tensor(std::vector<std::int64_t> s, std::vector<double> d);

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  std::size_t rank() const { return shape.size(); }
  std::int64_t dim(std::size_t i) const { return shape.at(i); }
  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  // Unchecked row-major accessors for the common ranks.
  double& at(std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
  double at(std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }
  double& at(std::int64_t i, std::int64_t j) {
    return data[static_cast<std::size_t>(i * shape[1] + j)];
  }
  double at(std::int64_t i, std::int64_t j) const {
    return data[static_cast<std::size_t>(i * shape[1] + j)];
  }
  double& at(std::int64_t i, std::int64_t j, std::int64_t k) {
    return data[static_cast<std::size_t>((i * shape[1] + j) * shape[2] + k)];
  }
  double at(std::int64_t i, std::int64_t j, std::int64_t k) const {
    return data[static_cast<std::size_t>((i * shape[1] + j) * shape[2] + k)];
  }

  static Tensor full(std::vector<std::int64_t> s, double value);
  static Tensor randn(std::vector<std::int64_t> s, Rng& rng, double stddev = 1.0);
};

// One vertex of the reverse-mode graph: a value, a lazily allocated gradient
// of the same shape, and a closure that pushes this node's gradient into its
// parents. Graphs are acyclic by construction (ops only reference existing
// nodes).
struct Node {
  Tensor value;
  Tensor grad;  // empty until touched; same shape as value afterwards
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void()> backprop;

  explicit Node(Tensor v, bool rg = false) : value(std::move(v)), requires_grad(rg) {}

  // Allocates a zero gradient on first use so fan-out accumulation works.
  Tensor& ensure_grad();
  void zero_grad();
};

using NodePtr = std::shared_ptr<Node>;

NodePtr make_const(Tensor v);
NodePtr make_param(Tensor v);

// Elementwise and matrix primitives. Each registers a backward rule when any
// input requires gradients; gradients accumulate (fan-out adds, never
// overwrites).
NodePtr add(const NodePtr& a, const NodePtr& b);
NodePtr sub(const NodePtr& a, const NodePtr& b);
NodePtr mul(const NodePtr& a, const NodePtr& b);
NodePtr scale(const NodePtr& a, double s);
NodePtr exp(const NodePtr& a);
NodePtr max0(const NodePtr& a);
NodePtr matmul(const NodePtr& a, const NodePtr& b);
NodePtr sum(const NodePtr& a);  // -> scalar [1]

// Reverse topological sweep from a scalar loss; every reachable node with
// requires_grad receives d(loss)/d(node), accumulated on top of whatever is
// already in its grad (call zero_grads between optimizer steps).
void backward(const NodePtr& loss);

// Zeroes the gradients of every node reachable from root.
void zero_grads(const NodePtr& root);

}  // namespace imunet
