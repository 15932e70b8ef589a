#include "ebd/autograd.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <stdexcept>

namespace ebd {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

ConstMap as_matrix(const Tensor& t) {
  return ConstMap(t.data.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

MutMap as_matrix(Tensor& t) {
  return MutMap(t.data.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape != b.shape) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_string(a.shape) + " vs " +
                                shape_string(b.shape));
  }
}

void require_same_tape(Var a, Var b, const char* op) {
  if (a.tape == nullptr || a.tape != b.tape) throw std::invalid_argument(std::string(op) + ": operands on different tapes");
}

template <typename F>
Var unary(Var x, F&& f, Tape::BackwardFn fn) {
  const Tensor& in = x.value();
  Tensor out(in.shape, std::vector<double>(in.numel()));
  for (std::size_t i = 0; i < in.numel(); ++i) out.data[i] = f(in.data[i]);
  return x.tape->record(std::move(out), {x}, std::move(fn));
}

// Accumulate dy * g(x, y) into dx, elementwise.
template <typename G>
Tape::BackwardFn elementwise_backward(G g) {
  return [g](Tape& tape, std::size_t self) {
    const std::size_t px = tape.parent(self, 0);
    const Tensor* dy = tape.grad_if_any(self);
    if (dy == nullptr) return;
    const Tensor& x = tape.value(px);
    const Tensor& y = tape.value(self);
    Tensor& dx = tape.grad_buffer(px);
    for (std::size_t i = 0; i < x.numel(); ++i) dx.data[i] += dy->data[i] * g(x.data[i], y.data[i]);
  };
}

void check_finite(const Tensor& t, const char* op) {
  for (std::size_t i = 0; i < t.numel(); ++i) {
    if (!std::isfinite(t.data[i])) {
      throw std::invalid_argument(std::string(op) + ": non-finite input at index " + std::to_string(i));
    }
  }
}

}  // namespace

// ---- ParamStore / Gradients ----------------------------------------------

std::size_t ParamStore::add(std::string name, Tensor value) {
  if (index_.contains(name)) throw std::invalid_argument("ParamStore: duplicate parameter '" + name + "'");
  index_.emplace(name, params_.size());
  params_.push_back({std::move(name), std::move(value)});
  return params_.size() - 1;
}

std::optional<std::size_t> ParamStore::find(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t ParamStore::index(std::string_view name) const {
  auto found = find(name);
  if (!found) throw std::out_of_range("ParamStore: unknown parameter '" + std::string(name) + "'");
  return *found;
}

std::size_t ParamStore::total_size() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

Gradients Gradients::zeros_like(const ParamStore& params) {
  Gradients g;
  g.per_param.reserve(params.size());
  for (const auto& p : params.all()) g.per_param.push_back(Tensor::zeros(p.value.shape));
  return g;
}

void Gradients::accumulate(const Gradients& other, double weight) {
  if (other.per_param.size() != per_param.size()) throw std::invalid_argument("Gradients::accumulate: size mismatch");
  for (std::size_t p = 0; p < per_param.size(); ++p) {
    auto& dst = per_param[p].data;
    const auto& src = other.per_param[p].data;
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += weight * src[i];
  }
}

void Gradients::scale(double factor) {
  for (auto& t : per_param)
    for (double& v : t.data) v *= factor;
}

double Gradients::global_norm() const {
  double sq = 0.0;
  for (const auto& t : per_param)
    for (double v : t.data) sq += v * v;
  return std::sqrt(sq);
}

bool ParamStore::all_finite() const {
  return std::all_of(params_.begin(), params_.end(), [](const Parameter& p) { return p.value.all_finite(); });
}

bool Gradients::all_finite() const {
  return std::all_of(per_param.begin(), per_param.end(), [](const Tensor& t) { return t.all_finite(); });
}

// ---- Tape -----------------------------------------------------------------

const Tensor& Var::value() const {
  if (tape == nullptr) throw std::logic_error("Var: unbound handle");
  return tape->value(id);
}

Var Tape::constant(Tensor value) {
  Node node;
  node.needs_grad = grad_enabled_ && value.requires_grad;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Var Tape::parameter(const ParamStore& store, std::size_t index) {
  if (index >= store.size()) throw std::out_of_range("Tape::parameter: index out of range");
  auto& cache = param_nodes_[&store];
  if (auto it = cache.find(index); it != cache.end()) return Var{this, it->second};
  Node node;
  node.external = &store[index].value;
  node.needs_grad = grad_enabled_;
  node.param_index = index;
  nodes_.push_back(std::move(node));
  cache.emplace(index, nodes_.size() - 1);
  return Var{this, nodes_.size() - 1};
}

Var Tape::parameter(const ParamStore& store, std::string_view name) { return parameter(store, store.index(name)); }

Var Tape::record(Tensor value, std::initializer_list<Var> parents, BackwardFn fn) {
  return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()), std::move(fn));
}

Var Tape::record(Tensor value, std::span<const Var> parents, BackwardFn fn) {
  Node node;
  node.value = std::move(value);
  node.parents.reserve(parents.size());
  bool any = false;
  for (Var p : parents) {
    if (p.tape != this) throw std::invalid_argument("Tape::record: parent from another tape");
    node.parents.push_back(p.id);
    any = any || nodes_[p.id].needs_grad;
  }
  node.needs_grad = grad_enabled_ && any;
  if (node.needs_grad) node.backward = std::move(fn);
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

const Tensor& Tape::value(std::size_t id) const {
  const Node& n = nodes_.at(id);
  return n.external != nullptr ? *n.external : n.value;
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  if (n.has_grad) return n.grad;
  return Tensor::zeros(value(v.id).shape);
}

Tensor& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    n.grad = Tensor::zeros(value(id).shape);
    n.has_grad = true;
  }
  return n.grad;
}

const Tensor* Tape::grad_if_any(std::size_t id) const {
  const Node& n = nodes_[id];
  return n.has_grad ? &n.grad : nullptr;
}

void Tape::backward(Var loss, double seed) {
  if (loss.tape != this) throw std::invalid_argument("Tape::backward: loss from another tape");
  if (value(loss.id).numel() != 1) {
    throw std::invalid_argument("Tape::backward: loss must be scalar, got shape " + shape_string(value(loss.id).shape));
  }
  for (auto& n : nodes_) {
    n.has_grad = false;
    n.grad = Tensor();
  }
  sweep_order_.clear();
  if (!nodes_[loss.id].needs_grad) return;
  grad_buffer(loss.id).data[0] = seed;
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.needs_grad || !n.has_grad) continue;
    sweep_order_.push_back(id);
    if (n.backward) n.backward(*this, id);
  }
}

Gradients Tape::backward(Var loss, const ParamStore& params) {
  backward(loss);
  Gradients g = Gradients::zeros_like(params);
  auto it = param_nodes_.find(&params);
  if (it == param_nodes_.end()) return g;
  for (const auto& [index, node_id] : it->second) {
    const Node& n = nodes_[node_id];
    if (n.has_grad) g.per_param[index] = n.grad;
  }
  return g;
}

// ---- elementwise ------------------------------------------------------------

Var add(Var a, Var b) {
  require_same_tape(a, b, "add");
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require_same_shape(x, y, "add");
  Tensor out(x.shape, std::vector<double>(x.numel()));
  for (std::size_t i = 0; i < x.numel(); ++i) out.data[i] = x.data[i] + y.data[i];
  return a.tape->record(std::move(out), {a, b}, [](Tape& t, std::size_t self) {
    const Tensor* dy = t.grad_if_any(self);
    if (dy == nullptr) return;
    for (std::size_t k = 0; k < 2; ++k) {
      const std::size_t p = t.parent(self, k);
      Tensor& dx = t.grad_buffer(p);
      for (std::size_t i = 0; i < dx.numel(); ++i) dx.data[i] += dy->data[i];
    }
  });
}

Var sub(Var a, Var b) {
  require_same_tape(a, b, "sub");
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require_same_shape(x, y, "sub");
  Tensor out(x.shape, std::vector<double>(x.numel()));
  for (std::size_t i = 0; i < x.numel(); ++i) out.data[i] = x.data[i] - y.data[i];
  return a.tape->record(std::move(out), {a, b}, [](Tape& t, std::size_t self) {
    const Tensor* dy = t.grad_if_any(self);
    if (dy == nullptr) return;
    Tensor& da = t.grad_buffer(t.parent(self, 0));
    for (std::size_t i = 0; i < da.numel(); ++i) da.data[i] += dy->data[i];
    Tensor& db = t.grad_buffer(t.parent(self, 1));
    for (std::size_t i = 0; i < db.numel(); ++i) db.data[i] -= dy->data[i];
  });
}

Var mul(Var a, Var b) {
  require_same_tape(a, b, "mul");
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require_same_shape(x, y, "mul");
  Tensor out(x.shape, std::vector<double>(x.numel()));
  for (std::size_t i = 0; i < x.numel(); ++i) out.data[i] = x.data[i] * y.data[i];
  return a.tape->record(std::move(out), {a, b}, [](Tape& t, std::size_t self) {
    const Tensor* dy = t.grad_if_any(self);
    if (dy == nullptr) return;
    const std::size_t pa = t.parent(self, 0);
    const std::size_t pb = t.parent(self, 1);
    const Tensor& va = t.value(pa);
    const Tensor& vb = t.value(pb);
    {
      Tensor& da = t.grad_buffer(pa);
      for (std::size_t i = 0; i < da.numel(); ++i) da.data[i] += dy->data[i] * vb.data[i];
    }
    Tensor& db = t.grad_buffer(pb);
    for (std::size_t i = 0; i < db.numel(); ++i) db.data[i] += dy->data[i] * va.data[i];
  });
}

Var scale(Var a, double factor) {
  return unary(a, [factor](double v) { return v * factor; },
               elementwise_backward([factor](double, double) { return factor; }));
}

Var add_scalar(Var a, double c) {
  return unary(a, [c](double v) { return v + c; }, elementwise_backward([](double, double) { return 1.0; }));
}

Var add_bias(Var x, Var b) {
  require_same_tape(x, b, "add_bias");
  const Tensor& xv = x.value();
  const Tensor& bv = b.value();
  if (bv.rank() != 1 || bv.numel() != xv.cols()) {
    throw std::invalid_argument("add_bias: bias " + shape_string(bv.shape) + " does not fit " + shape_string(xv.shape));
  }
  Tensor out = xv;
  out.requires_grad = false;
  const std::size_t rows = xv.rows(), cols = xv.cols();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out.data[r * cols + c] += bv.data[c];
  return x.tape->record(std::move(out), {x, b}, [rows, cols](Tape& t, std::size_t self) {
    const Tensor* dy = t.grad_if_any(self);
    if (dy == nullptr) return;
    const std::size_t px = t.parent(self, 0);
    const std::size_t pb = t.parent(self, 1);
    {
      Tensor& dx = t.grad_buffer(px);
      for (std::size_t i = 0; i < dx.numel(); ++i) dx.data[i] += dy->data[i];
    }
    Tensor& db = t.grad_buffer(pb);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) db.data[c] += dy->data[r * cols + c];
  });
}

Var matmul(Var a, Var b) {
  require_same_tape(a, b, "matmul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (bv.rank() != 2 || av.rank() == 0 || av.cols() != bv.rows()) {
    throw std::invalid_argument("matmul: incompatible shapes " + shape_string(av.shape) + " x " + shape_string(bv.shape));
  }
  const bool vec = av.rank() == 1;
  Tensor out = vec ? Tensor::zeros({bv.cols()}) : Tensor::zeros({av.rows(), bv.cols()});
  as_matrix(out).noalias() = as_matrix(av) * as_matrix(bv);
  return a.tape->record(std::move(out), {a, b}, [](Tape& t, std::size_t self) {
    const Tensor* dy = t.grad_if_any(self);
    if (dy == nullptr) return;
    const std::size_t pa = t.parent(self, 0);
    const std::size_t pb = t.parent(self, 1);
    const Tensor& va = t.value(pa);
    const Tensor& vb = t.value(pb);
    if (t.needs_grad(Var{&t, pa})) as_matrix(t.grad_buffer(pa)).noalias() += as_matrix(*dy) * as_matrix(vb).transpose();
    if (t.needs_grad(Var{&t, pb})) as_matrix(t.grad_buffer(pb)).noalias() += as_matrix(va).transpose() * as_matrix(*dy);
  });
}

Var matmul_nt(Var a, Var b) {
  require_same_tape(a, b, "matmul_nt");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (bv.rank() != 2 || av.rank() == 0 || av.cols() != bv.cols()) {
    throw std::invalid_argument("matmul_nt: incompatible shapes " + shape_string(av.shape) + " x " +
                                shape_string(bv.shape) + "^T");
  }
  const bool vec = av.rank() == 1;
  Tensor out = vec ? Tensor::zeros({bv.rows()}) : Tensor::zeros({av.rows(), bv.rows()});
  as_matrix(out).noalias() = as_matrix(av) * as_matrix(bv).transpose();
  return a.tape->record(std::move(out), {a, b}, [](Tape& t, std::size_t self) {
    const Tensor* dy = t.grad_if_any(self);
    if (dy == nullptr) return;
    const std::size_t pa = t.parent(self, 0);
    const std::size_t pb = t.parent(self, 1);
    const Tensor& va = t.value(pa);
    const Tensor& vb = t.value(pb);
    if (t.needs_grad(Var{&t, pa})) as_matrix(t.grad_buffer(pa)).noalias() += as_matrix(*dy) * as_matrix(vb);
    if (t.needs_grad(Var{&t, pb})) as_matrix(t.grad_buffer(pb)).noalias() += as_matrix(*dy).transpose() * as_matrix(va);
  });
}

Var tanh(Var x) {
  return unary(x, [](double v) { return std::tanh(v); },
               elementwise_backward([](double, double y) { return 1.0 - y * y; }));
}

Var sigmoid(Var x) {
  return unary(x, [](double v) { return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); },
               elementwise_backward([](double, double y) { return y * (1.0 - y); }));
}

Var gelu(Var x) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  return unary(x, [=](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
               elementwise_backward([=](double v, double) {
                 return 0.5 * (1.0 + std::erf(v * inv_sqrt2)) + v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
               }));
}

Var abs(Var x) {
  return unary(x, [](double v) { return std::fabs(v); },
               elementwise_backward([](double v, double) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); }));
}

Var square(Var x) {
  return unary(x, [](double v) { return v * v; }, elementwise_backward([](double v, double) { return 2.0 * v; }));
}

Var log_floor(Var x, double floor) {
  if (!(floor > 0)) throw std::invalid_argument("log_floor: floor must be positive");
  return unary(x, [floor](double v) { return std::log(std::max(v, floor)); },
               elementwise_backward([floor](double v, double) { return v > floor ? 1.0 / v : 0.0; }));
}

Var clamp_min(Var x, double c) {
  return unary(x, [c](double v) { return std::max(v, c); },
               elementwise_backward([c](double v, double) { return v > c ? 1.0 : 0.0; }));
}

// ---- normalizations -----------------------------------------------------------

std::vector<double> softmax_values(std::span<const double> x, double temperature) {
  if (!(temperature > 0) || !std::isfinite(temperature)) {
    throw std::invalid_argument("softmax: temperature must be positive and finite");
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i])) throw std::invalid_argument("softmax: non-finite input at index " + std::to_string(i));
  }
  std::vector<double> out(x.size());
  if (x.empty()) return out;
  const double mx = *std::max_element(x.begin(), x.end());
  double z = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = std::exp((x[i] - mx) / temperature);
    z += out[i];
  }
  for (double& v : out) v /= z;
  return out;
}

Var softmax(Var x, double temperature) {
  const Tensor& in = x.value();
  if (in.rank() == 0) throw std::invalid_argument("softmax: scalar input");
  check_finite(in, "softmax");
  Tensor out(in.shape, std::vector<double>(in.numel()));
  const std::size_t rows = in.rows(), cols = in.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    auto y = softmax_values(std::span<const double>(in.data.data() + r * cols, cols), temperature);
    std::copy(y.begin(), y.end(), out.data.begin() + static_cast<std::ptrdiff_t>(r * cols));
  }
  return x.tape->record(std::move(out), {x}, [rows, cols, temperature](Tape& t, std::size_t self) {
    const Tensor* dy = t.grad_if_any(self);
    if (dy == nullptr) return;
    const Tensor& y = t.value(self);
    Tensor& dx = t.grad_buffer(t.parent(self, 0));
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t o = r * cols;
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += dy->data[o + c] * y.data[o + c];
      for (std::size_t c = 0; c < cols; ++c) dx.data[o + c] += y.data[o + c] * (dy->data[o + c] - dot) / temperature;
    }
  });
}

Var log_softmax(Var x) {
  const Tensor& in = x.value();
  if (in.rank() == 0) throw std::invalid_argument("log_softmax: scalar input");
  check_finite(in, "log_softmax");
  Tensor out(in.shape, std::vector<double>(in.numel()));
  const std::size_t rows = in.rows(), cols = in.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t o = r * cols;
    double mx = in.data[o];
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, in.data[o + c]);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(in.data[o + c] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t c = 0; c < cols; ++c) out.data[o + c] = in.data[o + c] - lse;
  }
  return x.tape->record(std::move(out), {x}, [rows, cols](Tape& t, std::size_t self) {
    const Tensor* dy = t.grad_if_any(self);
    if (dy == nullptr) return;
    const Tensor& y = t.value(self);
    Tensor& dx = t.grad_buffer(t.parent(self, 0));
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t o = r * cols;
      double total = 0.0;
      for (std::size_t c = 0; c < cols; ++c) total += dy->data[o + c];
      for (std::size_t c = 0; c < cols; ++c) dx.data[o + c] += dy->data[o + c] - std::exp(y.data[o + c]) * total;
    }
  });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  require_same_tape(x, gamma, "layer_norm");
  require_same_tape(x, beta, "layer_norm");
  const Tensor& in = x.value();
  const std::size_t rows = in.rows(), cols = in.cols();
  if (gamma.value().numel() != cols || beta.value().numel() != cols) {
    throw std::invalid_argument("layer_norm: gain/bias size does not match " + shape_string(in.shape));
  }
  const Tensor& g = gamma.value();
  const Tensor& b = beta.value();
  Tensor out(in.shape, std::vector<double>(in.numel()));
  // Normalized rows and inverse deviations are kept for the backward pass.
  auto xhat = std::make_shared<std::vector<double>>(in.numel());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t o = r * cols;
    double mu = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mu += in.data[o + c];
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) var += (in.data[o + c] - mu) * (in.data[o + c] - mu);
    var /= static_cast<double>(cols);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t c = 0; c < cols; ++c) {
      const double h = (in.data[o + c] - mu) * is;
      (*xhat)[o + c] = h;
      out.data[o + c] = g.data[c] * h + b.data[c];
    }
  }
  return x.tape->record(std::move(out), {x, gamma, beta}, [rows, cols, xhat, inv_std](Tape& t, std::size_t self) {
    const Tensor* dy = t.grad_if_any(self);
    if (dy == nullptr) return;
    const std::size_t px = t.parent(self, 0), pg = t.parent(self, 1), pb = t.parent(self, 2);
    const Tensor& g = t.value(pg);
    if (t.needs_grad(Var{&t, pg}) || t.needs_grad(Var{&t, pb})) {
      Tensor& dg = t.grad_buffer(pg);
      Tensor& db = t.grad_buffer(pb);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) {
          dg.data[c] += dy->data[r * cols + c] * (*xhat)[r * cols + c];
          db.data[c] += dy->data[r * cols + c];
        }
    }
    if (!t.needs_grad(Var{&t, px})) return;
    Tensor& dx = t.grad_buffer(px);
    const double n = static_cast<double>(cols);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t o = r * cols;
      double mean_dh = 0.0, mean_dh_h = 0.0;
      for (std::size_t c = 0; c < cols; ++c) {
        const double dh = dy->data[o + c] * g.data[c];
        mean_dh += dh;
        mean_dh_h += dh * (*xhat)[o + c];
      }
      mean_dh /= n;
      mean_dh_h /= n;
      for (std::size_t c = 0; c < cols; ++c) {
        const double dh = dy->data[o + c] * g.data[c];
        dx.data[o + c] += (*inv_std)[r] * (dh - mean_dh - (*xhat)[o + c] * mean_dh_h);
      }
    }
  });
}

// ---- indexing and reductions --------------------------------------------------

Var embedding(Var table, std::span<const std::size_t> ids) {
  const Tensor& tv = table.value();
  if (tv.rank() != 2) throw std::invalid_argument("embedding: table must be a matrix");
  const std::size_t cols = tv.cols();
  Tensor out = Tensor::zeros({ids.size(), cols});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] >= tv.rows()) {
      throw std::out_of_range("embedding: id " + std::to_string(ids[r]) + " outside table of " +
                              std::to_string(tv.rows()) + " rows");
    }
    std::copy_n(tv.data.begin() + static_cast<std::ptrdiff_t>(ids[r] * cols), cols,
                out.data.begin() + static_cast<std::ptrdiff_t>(r * cols));
  }
  std::vector<std::size_t> idv(ids.begin(), ids.end());
  return table.tape->record(std::move(out), {table}, [idv = std::move(idv), cols](Tape& t, std::size_t self) {
    const Tensor* dy = t.grad_if_any(self);
    if (dy == nullptr) return;
    Tensor& dt = t.grad_buffer(t.parent(self, 0));
    for (std::size_t r = 0; r < idv.size(); ++r)
      for (std::size_t c = 0; c < cols; ++c) dt.data[idv[r] * cols + c] += dy->data[r * cols + c];
  });
}

Var slice_cols(Var x, std::size_t start, std::size_t count) {
  const Tensor& in = x.value();
  if (in.rank() != 2 || start + count > in.cols()) throw std::invalid_argument("slice_cols: slice out of range");
  const std::size_t rows = in.rows(), cols = in.cols();
  Tensor out = Tensor::zeros({rows, count});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < count; ++c) out.data[r * count + c] = in.data[r * cols + start + c];
  return x.tape->record(std::move(out), {x}, [rows, cols, start, count](Tape& t, std::size_t self) {
    const Tensor* dy = t.grad_if_any(self);
    if (dy == nullptr) return;
    Tensor& dx = t.grad_buffer(t.parent(self, 0));
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < count; ++c) dx.data[r * cols + start + c] += dy->data[r * count + c];
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  Tape* tape = parts[0].tape;
  const std::size_t rows = parts[0].value().rows();
  std::size_t total = 0;
  for (Var p : parts) {
    if (p.tape != tape || p.value().rank() != 2 || p.value().rows() != rows) {
      throw std::invalid_argument("concat_cols: inputs must be matrices with equal row counts");
    }
    total += p.value().cols();
  }
  Tensor out = Tensor::zeros({rows, total});
  std::size_t offset = 0;
  for (Var p : parts) {
    const Tensor& v = p.value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < v.cols(); ++c) out.data[r * total + offset + c] = v.data[r * v.cols() + c];
    offset += v.cols();
  }
  std::vector<std::size_t> widths;
  for (Var p : parts) widths.push_back(p.value().cols());
  return tape->record(std::move(out), parts, [rows, total, widths = std::move(widths)](Tape& t, std::size_t self) {
    const Tensor* dy = t.grad_if_any(self);
    if (dy == nullptr) return;
    std::size_t off = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      const std::size_t p = t.parent(self, k);
      if (t.needs_grad(Var{&t, p})) {
        Tensor& dx = t.grad_buffer(p);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < widths[k]; ++c) dx.data[r * widths[k] + c] += dy->data[r * total + off + c];
      }
      off += widths[k];
    }
  });
}

Var row(Var x, std::size_t r) {
  const Tensor& in = x.value();
  if (in.rank() != 2 || r >= in.rows()) throw std::out_of_range("row: index out of range");
  const std::size_t cols = in.cols();
  Tensor out = Tensor::zeros({cols});
  std::copy_n(in.data.begin() + static_cast<std::ptrdiff_t>(r * cols), cols, out.data.begin());
  return x.tape->record(std::move(out), {x}, [r, cols](Tape& t, std::size_t self) {
    const Tensor* dy = t.grad_if_any(self);
    if (dy == nullptr) return;
    Tensor& dx = t.grad_buffer(t.parent(self, 0));
    for (std::size_t c = 0; c < cols; ++c) dx.data[r * cols + c] += dy->data[c];
  });
}

Var reshape(Var x, std::vector<std::size_t> shape) {
  Tensor out(std::move(shape), x.value().data);
  return x.tape->record(std::move(out), {x}, [](Tape& t, std::size_t self) {
    const Tensor* dy = t.grad_if_any(self);
    if (dy == nullptr) return;
    Tensor& dx = t.grad_buffer(t.parent(self, 0));
    for (std::size_t i = 0; i < dx.numel(); ++i) dx.data[i] += dy->data[i];
  });
}

Var pick(Var x, std::size_t index) {
  const Tensor& in = x.value();
  if (index >= in.numel()) throw std::out_of_range("pick: index out of range");
  return x.tape->record(Tensor::scalar(in.data[index]), {x}, [index](Tape& t, std::size_t self) {
    const Tensor* dy = t.grad_if_any(self);
    if (dy == nullptr) return;
    t.grad_buffer(t.parent(self, 0)).data[index] += dy->data[0];
  });
}

Var pick_per_row(Var x, std::span<const std::size_t> cols_idx) {
  const Tensor& in = x.value();
  const std::size_t rows = in.rows(), cols = in.cols();
  if (cols_idx.size() != rows) throw std::invalid_argument("pick_per_row: one index per row required");
  Tensor out = Tensor::zeros({rows});
  for (std::size_t r = 0; r < rows; ++r) {
    if (cols_idx[r] >= cols) throw std::out_of_range("pick_per_row: column index out of range");
    out.data[r] = in.data[r * cols + cols_idx[r]];
  }
  std::vector<std::size_t> idx(cols_idx.begin(), cols_idx.end());
  return x.tape->record(std::move(out), {x}, [idx = std::move(idx), cols](Tape& t, std::size_t self) {
    const Tensor* dy = t.grad_if_any(self);
    if (dy == nullptr) return;
    Tensor& dx = t.grad_buffer(t.parent(self, 0));
    for (std::size_t r = 0; r < idx.size(); ++r) dx.data[r * cols + idx[r]] += dy->data[r];
  });
}

Var sum(Var x) {
  const Tensor& in = x.value();
  double s = 0.0;
  for (double v : in.data) s += v;
  return x.tape->record(Tensor::scalar(s), {x}, [](Tape& t, std::size_t self) {
    const Tensor* dy = t.grad_if_any(self);
    if (dy == nullptr) return;
    Tensor& dx = t.grad_buffer(t.parent(self, 0));
    for (double& v : dx.data) v += dy->data[0];
  });
}

Var mean(Var x) {
  const std::size_t n = x.value().numel();
  if (n == 0) throw std::invalid_argument("mean: empty input");
  return scale(sum(x), 1.0 / static_cast<double>(n));
}

Var sum_rows(Var x) {
  const Tensor& in = x.value();
  const std::size_t rows = in.rows(), cols = in.cols();
  Tensor out = Tensor::zeros({cols});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out.data[c] += in.data[r * cols + c];
  return x.tape->record(std::move(out), {x}, [rows, cols](Tape& t, std::size_t self) {
    const Tensor* dy = t.grad_if_any(self);
    if (dy == nullptr) return;
    Tensor& dx = t.grad_buffer(t.parent(self, 0));
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) dx.data[r * cols + c] += dy->data[c];
  });
}

Var scale_rows(Var x, Var w) {
  require_same_tape(x, w, "scale_rows");
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const std::size_t rows = xv.rows(), cols = xv.cols();
  if (wv.rank() != 1 || wv.numel() != rows) throw std::invalid_argument("scale_rows: one weight per row required");
  Tensor out(xv.shape, std::vector<double>(xv.numel()));
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out.data[r * cols + c] = xv.data[r * cols + c] * wv.data[r];
  return x.tape->record(std::move(out), {x, w}, [rows, cols](Tape& t, std::size_t self) {
    const Tensor* dy = t.grad_if_any(self);
    if (dy == nullptr) return;
    const std::size_t px = t.parent(self, 0), pw = t.parent(self, 1);
    const Tensor& xv2 = t.value(px);
    const Tensor& wv2 = t.value(pw);
    if (t.needs_grad(Var{&t, px})) {
      Tensor& dx = t.grad_buffer(px);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) dx.data[r * cols + c] += dy->data[r * cols + c] * wv2.data[r];
    }
    if (t.needs_grad(Var{&t, pw})) {
      Tensor& dw = t.grad_buffer(pw);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) dw.data[r] += dy->data[r * cols + c] * xv2.data[r * cols + c];
    }
  });
}

Var normalize_sum(Var x) {
  const Tensor& in = x.value();
  if (in.rank() != 1) throw std::invalid_argument("normalize_sum: rank-1 input required");
  double s = 0.0;
  for (double v : in.data) s += v;
  if (!(s > 0) || !std::isfinite(s)) throw std::invalid_argument("normalize_sum: sum must be positive and finite");
  Tensor out(in.shape, std::vector<double>(in.numel()));
  for (std::size_t i = 0; i < in.numel(); ++i) out.data[i] = in.data[i] / s;
  return x.tape->record(std::move(out), {x}, [s](Tape& t, std::size_t self) {
    const Tensor* dy = t.grad_if_any(self);
    if (dy == nullptr) return;
    const Tensor& y = t.value(self);
    double dot = 0.0;
    for (std::size_t i = 0; i < y.numel(); ++i) dot += dy->data[i] * y.data[i];
    Tensor& dx = t.grad_buffer(t.parent(self, 0));
    for (std::size_t i = 0; i < y.numel(); ++i) dx.data[i] += (dy->data[i] - dot) / s;
  });
}

}  // namespace ebd
