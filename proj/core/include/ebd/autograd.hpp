#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ebd/tensor.hpp"

namespace ebd {

struct Parameter {
  std::string name;
  Tensor value;
};

// Named, ordered parameter collection. Indices are stable; tapes keep pointers
// into the store, so parameters must not be added while a tape is alive.
class ParamStore {
 public:
  std::size_t add(std::string name, Tensor value);

  std::size_t size() const { return params_.size(); }
  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }

  std::optional<std::size_t> find(std::string_view name) const;
  std::size_t index(std::string_view name) const;
  Tensor& value(std::string_view name) { return params_[index(name)].value; }
  const Tensor& value(std::string_view name) const { return params_[index(name)].value; }

  std::span<Parameter> all() { return params_; }
  std::span<const Parameter> all() const { return params_; }
  std::size_t total_size() const;
  bool all_finite() const;

 private:
  std::vector<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Gradient per parameter, indexed like the ParamStore it was computed for.
struct Gradients {
  std::vector<Tensor> per_param;

  static Gradients zeros_like(const ParamStore& params);
  void accumulate(const Gradients& other, double weight = 1.0);
  void scale(double factor);
  double global_norm() const;
  bool all_finite() const;
};

class Tape;

// Handle to a recorded value. Cheap to copy; valid while its tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const std::vector<std::size_t>& shape() const { return value().shape; }
  std::size_t numel() const { return value().numel(); }
};

// Computation record: operations are appended in execution order, so reverse
// insertion order is a valid reverse topological order for the sweep.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  // Leaf; gradients are tracked when value.requires_grad is set.
  Var constant(Tensor value);
  // Leaf bound to a stored parameter. Repeated requests return the same node.
  Var parameter(const ParamStore& store, std::size_t index);
  Var parameter(const ParamStore& store, std::string_view name);

  // Appends an operation. fn runs during the sweep only if the result needs a gradient.
  Var record(Tensor value, std::initializer_list<Var> parents, BackwardFn fn);
  Var record(Tensor value, std::span<const Var> parents, BackwardFn fn);

  const Tensor& value(std::size_t id) const;
  const Tensor& value(Var v) const { return value(v.id); }
  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }
  // Gradient of the last backward() target with respect to v; zeros if v was unused.
  Tensor grad(Var v) const;

  // Reverse sweep from a scalar. Seeds d(loss)=seed.
  void backward(Var loss, double seed = 1.0);
  // Reverse sweep, then collect d(loss)/dp for every parameter of the store.
  Gradients backward(Var loss, const ParamStore& params);

  std::size_t size() const { return nodes_.size(); }
  // Node ids in the order the last sweep processed them.
  const std::vector<std::size_t>& sweep_order() const { return sweep_order_; }

  // For operation implementations: the gradient buffer of a node, allocated on demand.
  Tensor& grad_buffer(std::size_t id);
  const Tensor* grad_if_any(std::size_t id) const;
  std::size_t parent(std::size_t id, std::size_t k) const { return nodes_[id].parents[k]; }

 private:
  struct Node {
    Tensor value;
    const Tensor* external = nullptr;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    Tensor grad;
    bool has_grad = false;
    bool needs_grad = false;
    std::optional<std::size_t> param_index;
  };

  std::vector<Node> nodes_;
  std::unordered_map<const ParamStore*, std::unordered_map<std::size_t, std::size_t>> param_nodes_;
  std::vector<std::size_t> sweep_order_;
  bool grad_enabled_;
};

// ---- primitive operations -------------------------------------------------
// Elementwise binary ops require identical shapes.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var add_scalar(Var a, double c);
// x (m x n) + b (n), added to every row.
Var add_bias(Var x, Var b);
// (m x k)(k x n); a rank-1 left operand is a single row and yields rank 1.
Var matmul(Var a, Var b);
// a * b^T: (m x k)(n x k)^T; a rank-1 left operand yields rank 1.
Var matmul_nt(Var a, Var b);

Var tanh(Var x);
Var sigmoid(Var x);
Var gelu(Var x);
Var abs(Var x);
Var square(Var x);
// log(max(x, floor)); floored entries get zero gradient.
Var log_floor(Var x, double floor);
// max(x, c); clamped entries get zero gradient.
Var clamp_min(Var x, double c);

// Row-wise stabilized softmax of x / temperature. Rank 1 is a single row.
Var softmax(Var x, double temperature = 1.0);
Var log_softmax(Var x);
Var layer_norm(Var x, Var gamma, Var beta, double eps);

// Rows of table selected by ids.
Var embedding(Var table, std::span<const std::size_t> ids);
Var slice_cols(Var x, std::size_t start, std::size_t count);
Var concat_cols(std::span<const Var> parts);
Var row(Var x, std::size_t r);
// Same data, new shape of equal element count.
Var reshape(Var x, std::vector<std::size_t> shape);
// Scalar element at flat index.
Var pick(Var x, std::size_t index);
// Vector of x(i, cols[i]).
Var pick_per_row(Var x, std::span<const std::size_t> cols);

Var sum(Var x);
Var mean(Var x);
// Column sums of a matrix -> rank 1.
Var sum_rows(Var x);
// x(i, j) * w(i).
Var scale_rows(Var x, Var w);
// x / sum(x) for a rank-1 x with positive sum.
Var normalize_sum(Var x);

// Plain-value softmax used by value-level APIs and tests.
std::vector<double> softmax_values(std::span<const double> x, double temperature = 1.0);

}  // namespace ebd
