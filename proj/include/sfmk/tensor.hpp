#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "sfmk/common.hpp"
#include "sfmk/random.hpp"

namespace sfmk {

namespace detail {

struct Node;
using NodePtr = std::shared_ptr<Node>;

// One recorded value in the computation graph. Consumers point at their
// producers through `parents`; `backward_fn` adds this node's local gradient
// contribution into each parent's grad buffer.
struct Node {
  Shape shape;
  std::vector<real> value;
  std::vector<real> grad;
  bool requires_grad = false;
  bool has_run = false;
  std::vector<NodePtr> parents;
  std::function<void()> backward_fn;
  const char* op = "leaf";

  int64_t size() const { return static_cast<int64_t>(value.size()); }
  real* grad_data() {
    if (grad.empty()) grad.assign(value.size(), real(0));
    return grad.data();
  }
};

inline NodePtr make_node(Shape s) {
  auto n = std::make_shared<Node>();
  n->value.assign(static_cast<size_t>(numel(s)), real(0));
  n->shape = std::move(s);
  return n;
}

inline bool& finite_flag() {
  static bool on = true;
  return on;
}

inline void check_finite(const char* op, const std::vector<real>& v) {
  if (!finite_flag()) return;
  for (size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      throw NumericError(std::string("non-finite value from op '") + op +
                         "' at flat index " + std::to_string(i));
    }
  }
}

}  // namespace detail

// Toggle the per-op non-finite scan. On by default; heavy production runs may
// switch it off.
inline void set_finite_checks(bool on) { detail::finite_flag() = on; }
inline bool finite_checks() { return detail::finite_flag(); }

// Value-semantics handle to a graph node. Copies share the node.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(detail::NodePtr n) : n_(std::move(n)) {}

  static Tensor zeros(Shape s, bool requires_grad = false) {
    auto n = detail::make_node(std::move(s));
    n->requires_grad = requires_grad;
    return Tensor(n);
  }

  static Tensor full(Shape s, real v, bool requires_grad = false) {
    Tensor t = zeros(std::move(s), requires_grad);
    std::fill(t.data().begin(), t.data().end(), v);
    return t;
  }

  static Tensor scalar(real v, bool requires_grad = false) {
    return full({1}, v, requires_grad);
  }

  static Tensor from_data(Shape s, std::vector<real> v,
                          bool requires_grad = false) {
    require(numel(s) == static_cast<int64_t>(v.size()),
            "from_data: payload size does not match shape " + shape_str(s));
    auto n = detail::make_node(std::move(s));
    n->value = std::move(v);
    n->requires_grad = requires_grad;
    return Tensor(n);
  }

  static Tensor uniform(Shape s, Rng& rng, real lo = 0, real hi = 1,
                        bool requires_grad = false) {
    Tensor t = zeros(std::move(s), requires_grad);
    for (real& x : t.data()) x = static_cast<real>(rng.uniform(lo, hi));
    return t;
  }

  static Tensor normal(Shape s, Rng& rng, real mean = 0, real stddev = 1,
                       bool requires_grad = false) {
    Tensor t = zeros(std::move(s), requires_grad);
    for (real& x : t.data()) x = static_cast<real>(rng.normal(mean, stddev));
    return t;
  }

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  int64_t dim(size_t i) const { return n_->shape.at(i); }
  size_t rank() const { return n_->shape.size(); }
  int64_t size() const { return n_->size(); }

  std::vector<real>& data() { return n_->value; }
  const std::vector<real>& data() const { return n_->value; }
  real operator[](int64_t i) const { return n_->value[static_cast<size_t>(i)]; }

  real item() const {
    require(size() == 1, "item: tensor is not scalar, shape " + shape_str(shape()));
    return n_->value[0];
  }

  bool requires_grad() const { return n_->requires_grad; }
  void set_requires_grad(bool rg) {
    if (rg && (!n_->parents.empty() || n_->backward_fn))
      throw GraphError("set_requires_grad: only leaf tensors may be toggled");
    n_->requires_grad = rg;
  }

  bool has_grad() const { return !n_->grad.empty(); }
  const std::vector<real>& grad() const {
    if (n_->grad.empty())
      throw GraphError(std::string("grad: no gradient recorded for op '") +
                       n_->op + "'");
    return n_->grad;
  }
  void zero_grad() {
    if (!n_->grad.empty()) std::fill(n_->grad.begin(), n_->grad.end(), real(0));
  }

  // Copy of the value with no graph attachment; safe to hand to other threads.
  Tensor detach() const {
    auto n = detail::make_node(n_->shape);
    n->value = n_->value;
    return Tensor(n);
  }

  const char* op() const { return n_->op; }
  detail::NodePtr node() const { return n_; }

  // Reverse-mode sweep from a scalar root. Visits recorded ops in exact
  // reverse topological order, accumulating into parent grads; each closure
  // runs once and is then released, so a second sweep over any part of the
  // same graph raises GraphError.
  void backward() {
    detail::Node* root = n_.get();
    if (!root) throw GraphError("backward: empty tensor");
    if (root->size() != 1)
      throw GraphError("backward: root must be scalar, shape " +
                       shape_str(root->shape));
    if (!root->requires_grad)
      throw GraphError("backward: root does not require gradients");
    if (root->has_run) throw GraphError("backward: graph already consumed");

    // The order list holds owning pointers: releasing a visited node's
    // closure and parent links must not free nodes still awaiting their turn.
    std::vector<detail::NodePtr> order;
    std::unordered_set<detail::Node*> visited{root};
    std::vector<std::pair<detail::NodePtr, size_t>> stack{{n_, 0}};
    while (!stack.empty()) {
      auto& [n, i] = stack.back();
      if (i < n->parents.size()) {
        const detail::NodePtr& p = n->parents[i++];
        if (p->requires_grad && !visited.count(p.get())) {
          if (p->has_run)
            throw GraphError("backward: graph already consumed");
          visited.insert(p.get());
          stack.push_back({p, 0});
        }
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }

    root->grad_data()[0] = real(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      detail::Node* n = it->get();
      if (n->backward_fn) {
        n->backward_fn();
        n->backward_fn = nullptr;
        n->has_run = true;
        n->parents.clear();
      }
    }
  }

 private:
  detail::NodePtr n_;
};

namespace detail {

// Completes an op node: finite scan, then gradient bookkeeping if any parent
// participates in differentiation.
inline Tensor finish(const char* op, NodePtr out, std::vector<NodePtr> parents,
                     std::function<void()> fn) {
  out->op = op;
  check_finite(op, out->value);
  bool rg = false;
  for (const auto& p : parents) rg = rg || p->requires_grad;
  if (rg) {
    out->requires_grad = true;
    out->parents = std::move(parents);
    out->backward_fn = std::move(fn);
  }
  return Tensor(out);
}

enum class BinKind { kSame, kScalarA, kScalarB };

inline std::pair<BinKind, Shape> bin_shape(const char* op, const Tensor& a,
                                           const Tensor& b) {
  if (a.shape() == b.shape()) return {BinKind::kSame, a.shape()};
  if (b.size() == 1) return {BinKind::kScalarB, a.shape()};
  if (a.size() == 1) return {BinKind::kScalarA, b.shape()};
  throw ShapeError(std::string(op) + ": incompatible shapes " +
                   shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                   " (only scalar-tensor broadcasting is supported)");
}

}  // namespace detail

// ---- elementwise arithmetic ----

inline Tensor add(const Tensor& a, const Tensor& b) {
  auto [kind, shape] = detail::bin_shape("add", a, b);
  auto out = detail::make_node(shape);
  const auto& av = a.data();
  const auto& bv = b.data();
  auto& ov = out->value;
  const size_t n = ov.size();
  switch (kind) {
    case detail::BinKind::kSame:
      for (size_t i = 0; i < n; ++i) ov[i] = av[i] + bv[i];
      break;
    case detail::BinKind::kScalarB:
      for (size_t i = 0; i < n; ++i) ov[i] = av[i] + bv[0];
      break;
    case detail::BinKind::kScalarA:
      for (size_t i = 0; i < n; ++i) ov[i] = av[0] + bv[i];
      break;
  }
  return detail::finish("add", out, {a.node(), b.node()},
                        [self = out.get(), an = a.node(), bn = b.node(), kind] {
    const real* g = self->grad.data();
    const size_t n = self->value.size();
    if (an->requires_grad) {
      real* ga = an->grad_data();
      if (kind == detail::BinKind::kScalarA)
        for (size_t i = 0; i < n; ++i) ga[0] += g[i];
      else
        for (size_t i = 0; i < n; ++i) ga[i] += g[i];
    }
    if (bn->requires_grad) {
      real* gb = bn->grad_data();
      if (kind == detail::BinKind::kScalarB)
        for (size_t i = 0; i < n; ++i) gb[0] += g[i];
      else
        for (size_t i = 0; i < n; ++i) gb[i] += g[i];
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  auto [kind, shape] = detail::bin_shape("sub", a, b);
  auto out = detail::make_node(shape);
  const auto& av = a.data();
  const auto& bv = b.data();
  auto& ov = out->value;
  const size_t n = ov.size();
  switch (kind) {
    case detail::BinKind::kSame:
      for (size_t i = 0; i < n; ++i) ov[i] = av[i] - bv[i];
      break;
    case detail::BinKind::kScalarB:
      for (size_t i = 0; i < n; ++i) ov[i] = av[i] - bv[0];
      break;
    case detail::BinKind::kScalarA:
      for (size_t i = 0; i < n; ++i) ov[i] = av[0] - bv[i];
      break;
  }
  return detail::finish("sub", out, {a.node(), b.node()},
                        [self = out.get(), an = a.node(), bn = b.node(), kind] {
    const real* g = self->grad.data();
    const size_t n = self->value.size();
    if (an->requires_grad) {
      real* ga = an->grad_data();
      if (kind == detail::BinKind::kScalarA)
        for (size_t i = 0; i < n; ++i) ga[0] += g[i];
      else
        for (size_t i = 0; i < n; ++i) ga[i] += g[i];
    }
    if (bn->requires_grad) {
      real* gb = bn->grad_data();
      if (kind == detail::BinKind::kScalarB)
        for (size_t i = 0; i < n; ++i) gb[0] -= g[i];
      else
        for (size_t i = 0; i < n; ++i) gb[i] -= g[i];
    }
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  auto [kind, shape] = detail::bin_shape("mul", a, b);
  auto out = detail::make_node(shape);
  const auto& av = a.data();
  const auto& bv = b.data();
  auto& ov = out->value;
  const size_t n = ov.size();
  switch (kind) {
    case detail::BinKind::kSame:
      for (size_t i = 0; i < n; ++i) ov[i] = av[i] * bv[i];
      break;
    case detail::BinKind::kScalarB:
      for (size_t i = 0; i < n; ++i) ov[i] = av[i] * bv[0];
      break;
    case detail::BinKind::kScalarA:
      for (size_t i = 0; i < n; ++i) ov[i] = av[0] * bv[i];
      break;
  }
  return detail::finish("mul", out, {a.node(), b.node()},
                        [self = out.get(), an = a.node(), bn = b.node(), kind] {
    const real* g = self->grad.data();
    const real* av = an->value.data();
    const real* bv = bn->value.data();
    const size_t n = self->value.size();
    if (an->requires_grad) {
      real* ga = an->grad_data();
      switch (kind) {
        case detail::BinKind::kSame:
          for (size_t i = 0; i < n; ++i) ga[i] += g[i] * bv[i];
          break;
        case detail::BinKind::kScalarB:
          for (size_t i = 0; i < n; ++i) ga[i] += g[i] * bv[0];
          break;
        case detail::BinKind::kScalarA:
          for (size_t i = 0; i < n; ++i) ga[0] += g[i] * bv[i];
          break;
      }
    }
    if (bn->requires_grad) {
      real* gb = bn->grad_data();
      switch (kind) {
        case detail::BinKind::kSame:
          for (size_t i = 0; i < n; ++i) gb[i] += g[i] * av[i];
          break;
        case detail::BinKind::kScalarB:
          for (size_t i = 0; i < n; ++i) gb[0] += g[i] * av[i];
          break;
        case detail::BinKind::kScalarA:
          for (size_t i = 0; i < n; ++i) gb[i] += g[i] * av[0];
          break;
      }
    }
  });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
  auto [kind, shape] = detail::bin_shape("div", a, b);
  auto out = detail::make_node(shape);
  const auto& av = a.data();
  const auto& bv = b.data();
  auto& ov = out->value;
  const size_t n = ov.size();
  switch (kind) {
    case detail::BinKind::kSame:
      for (size_t i = 0; i < n; ++i) ov[i] = av[i] / bv[i];
      break;
    case detail::BinKind::kScalarB:
      for (size_t i = 0; i < n; ++i) ov[i] = av[i] / bv[0];
      break;
    case detail::BinKind::kScalarA:
      for (size_t i = 0; i < n; ++i) ov[i] = av[0] / bv[i];
      break;
  }
  return detail::finish("div", out, {a.node(), b.node()},
                        [self = out.get(), an = a.node(), bn = b.node(), kind] {
    const real* g = self->grad.data();
    const real* av = an->value.data();
    const real* bv = bn->value.data();
    const size_t n = self->value.size();
    if (an->requires_grad) {
      real* ga = an->grad_data();
      switch (kind) {
        case detail::BinKind::kSame:
          for (size_t i = 0; i < n; ++i) ga[i] += g[i] / bv[i];
          break;
        case detail::BinKind::kScalarB:
          for (size_t i = 0; i < n; ++i) ga[i] += g[i] / bv[0];
          break;
        case detail::BinKind::kScalarA:
          for (size_t i = 0; i < n; ++i) ga[0] += g[i] / bv[i];
          break;
      }
    }
    if (bn->requires_grad) {
      real* gb = bn->grad_data();
      switch (kind) {
        case detail::BinKind::kSame:
          for (size_t i = 0; i < n; ++i)
            gb[i] -= g[i] * av[i] / (bv[i] * bv[i]);
          break;
        case detail::BinKind::kScalarB:
          for (size_t i = 0; i < n; ++i)
            gb[0] -= g[i] * av[i] / (bv[0] * bv[0]);
          break;
        case detail::BinKind::kScalarA:
          for (size_t i = 0; i < n; ++i)
            gb[i] -= g[i] * av[0] / (bv[i] * bv[i]);
          break;
      }
    }
  });
}

inline Tensor add(const Tensor& a, real c) { return add(a, Tensor::scalar(c)); }
inline Tensor sub(const Tensor& a, real c) { return sub(a, Tensor::scalar(c)); }
inline Tensor mul(const Tensor& a, real c) { return mul(a, Tensor::scalar(c)); }
inline Tensor div(const Tensor& a, real c) { return div(a, Tensor::scalar(c)); }

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }

namespace detail {

// Shared scaffolding for elementwise y = f(x) ops: `fwd` computes the value,
// `dfdx(x, y)` the local derivative.
template <class F, class D>
inline Tensor unary_op(const char* op, const Tensor& a, F fwd, D dfdx) {
  auto out = make_node(a.shape());
  const auto& av = a.data();
  auto& ov = out->value;
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = fwd(av[i]);
  return finish(op, out, {a.node()}, [self = out.get(), an = a.node(), dfdx] {
    const real* g = self->grad.data();
    const real* x = an->value.data();
    const real* y = self->value.data();
    real* ga = an->grad_data();
    for (size_t i = 0; i < self->value.size(); ++i)
      ga[i] += g[i] * dfdx(x[i], y[i]);
  });
}

}  // namespace detail

inline Tensor neg(const Tensor& a) {
  return detail::unary_op("neg", a, [](real x) { return -x; },
                          [](real, real) { return real(-1); });
}
inline Tensor operator-(const Tensor& a) { return neg(a); }

inline Tensor abs(const Tensor& a) {
  return detail::unary_op("abs", a, [](real x) { return std::fabs(x); },
                          [](real x, real) {
                            return x > 0 ? real(1) : (x < 0 ? real(-1) : real(0));
                          });
}

inline Tensor exp(const Tensor& a) {
  return detail::unary_op("exp", a, [](real x) { return std::exp(x); },
                          [](real, real y) { return y; });
}

inline Tensor log(const Tensor& a) {
  return detail::unary_op("log", a, [](real x) { return std::log(x); },
                          [](real x, real) { return real(1) / x; });
}

inline Tensor sqrt(const Tensor& a) {
  return detail::unary_op("sqrt", a, [](real x) { return std::sqrt(x); },
                          [](real, real y) { return real(0.5) / y; });
}

inline Tensor sin(const Tensor& a) {
  return detail::unary_op("sin", a, [](real x) { return std::sin(x); },
                          [](real x, real) { return std::cos(x); });
}

inline Tensor cos(const Tensor& a) {
  return detail::unary_op("cos", a, [](real x) { return std::cos(x); },
                          [](real x, real) { return -std::sin(x); });
}

inline Tensor relu(const Tensor& a) {
  return detail::unary_op("relu", a,
                          [](real x) { return x > 0 ? x : real(0); },
                          [](real x, real) { return x > 0 ? real(1) : real(0); });
}

inline Tensor sigmoid(const Tensor& a) {
  return detail::unary_op(
      "sigmoid", a,
      [](real x) {
        return x >= 0 ? real(1) / (real(1) + std::exp(-x))
                      : std::exp(x) / (real(1) + std::exp(x));
      },
      [](real, real y) { return y * (real(1) - y); });
}

inline Tensor softplus(const Tensor& a) {
  return detail::unary_op(
      "softplus", a,
      [](real x) { return std::log1p(std::exp(-std::fabs(x))) + std::max(x, real(0)); },
      [](real x, real) {
        return x >= 0 ? real(1) / (real(1) + std::exp(-x))
                      : std::exp(x) / (real(1) + std::exp(x));
      });
}

inline Tensor gelu(const Tensor& a) {
  constexpr real kInvSqrt2 = real(0.7071067811865475244);
  constexpr real kInvSqrt2Pi = real(0.3989422804014326779);
  return detail::unary_op(
      "gelu", a,
      [=](real x) { return real(0.5) * x * (real(1) + std::erf(x * kInvSqrt2)); },
      [=](real x, real) {
        real phi = real(0.5) * (real(1) + std::erf(x * kInvSqrt2));
        return phi + x * kInvSqrt2Pi * std::exp(real(-0.5) * x * x);
      });
}

inline Tensor clamp(const Tensor& a, real lo, real hi) {
  require(lo <= hi, "clamp: lo must not exceed hi");
  return detail::unary_op(
      "clamp", a,
      [=](real x) { return std::min(std::max(x, lo), hi); },
      [=](real x, real) { return (x >= lo && x <= hi) ? real(1) : real(0); });
}

inline Tensor minimum(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), "minimum: shapes differ, " +
          shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  auto out = detail::make_node(a.shape());
  const auto& av = a.data();
  const auto& bv = b.data();
  for (size_t i = 0; i < out->value.size(); ++i)
    out->value[i] = std::min(av[i], bv[i]);
  return detail::finish("minimum", out, {a.node(), b.node()},
                        [self = out.get(), an = a.node(), bn = b.node()] {
    const real* g = self->grad.data();
    const real* av = an->value.data();
    const real* bv = bn->value.data();
    real* ga = an->requires_grad ? an->grad_data() : nullptr;
    real* gb = bn->requires_grad ? bn->grad_data() : nullptr;
    for (size_t i = 0; i < self->value.size(); ++i) {
      if (av[i] <= bv[i]) {
        if (ga) ga[i] += g[i];
      } else if (gb) {
        gb[i] += g[i];
      }
    }
  });
}

inline Tensor maximum(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), "maximum: shapes differ, " +
          shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  auto out = detail::make_node(a.shape());
  const auto& av = a.data();
  const auto& bv = b.data();
  for (size_t i = 0; i < out->value.size(); ++i)
    out->value[i] = std::max(av[i], bv[i]);
  return detail::finish("maximum", out, {a.node(), b.node()},
                        [self = out.get(), an = a.node(), bn = b.node()] {
    const real* g = self->grad.data();
    const real* av = an->value.data();
    const real* bv = bn->value.data();
    real* ga = an->requires_grad ? an->grad_data() : nullptr;
    real* gb = bn->requires_grad ? bn->grad_data() : nullptr;
    for (size_t i = 0; i < self->value.size(); ++i) {
      if (av[i] >= bv[i]) {
        if (ga) ga[i] += g[i];
      } else if (gb) {
        gb[i] += g[i];
      }
    }
  });
}

// ---- reductions ----

inline Tensor reduce_sum(const Tensor& a) {
  auto out = detail::make_node(Shape{1});
  real acc = 0;
  for (real x : a.data()) acc += x;
  out->value[0] = acc;
  return detail::finish("reduce_sum", out, {a.node()},
                        [self = out.get(), an = a.node()] {
    const real g = self->grad[0];
    real* ga = an->grad_data();
    for (size_t i = 0; i < an->value.size(); ++i) ga[i] += g;
  });
}

inline Tensor reduce_mean(const Tensor& a) {
  require(a.size() > 0, "reduce_mean: empty tensor");
  auto out = detail::make_node(Shape{1});
  real acc = 0;
  for (real x : a.data()) acc += x;
  out->value[0] = acc / static_cast<real>(a.size());
  return detail::finish("reduce_mean", out, {a.node()},
                        [self = out.get(), an = a.node()] {
    const real g = self->grad[0] / static_cast<real>(an->value.size());
    real* ga = an->grad_data();
    for (size_t i = 0; i < an->value.size(); ++i) ga[i] += g;
  });
}

inline Tensor reduce_min(const Tensor& a) {
  require(a.size() > 0, "reduce_min: empty tensor");
  auto out = detail::make_node(Shape{1});
  const auto& av = a.data();
  size_t arg = 0;
  for (size_t i = 1; i < av.size(); ++i)
    if (av[i] < av[arg]) arg = i;
  out->value[0] = av[arg];
  return detail::finish("reduce_min", out, {a.node()},
                        [self = out.get(), an = a.node(), arg] {
    an->grad_data()[arg] += self->grad[0];
  });
}

namespace detail {

struct AxisSpan {
  int64_t outer, n, inner;
};

inline AxisSpan axis_span(const char* op, const Shape& s, size_t axis) {
  if (axis >= s.size())
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                     " out of range for shape " + shape_str(s));
  AxisSpan sp{1, s[axis], 1};
  for (size_t i = 0; i < axis; ++i) sp.outer *= s[i];
  for (size_t i = axis + 1; i < s.size(); ++i) sp.inner *= s[i];
  return sp;
}

inline Shape drop_axis(const Shape& s, size_t axis) {
  Shape r;
  for (size_t i = 0; i < s.size(); ++i)
    if (i != axis) r.push_back(s[i]);
  if (r.empty()) r.push_back(1);
  return r;
}

}  // namespace detail

inline Tensor reduce_sum(const Tensor& a, size_t axis) {
  auto sp = detail::axis_span("reduce_sum", a.shape(), axis);
  auto out = detail::make_node(detail::drop_axis(a.shape(), axis));
  const auto& av = a.data();
  for (int64_t o = 0; o < sp.outer; ++o)
    for (int64_t k = 0; k < sp.n; ++k)
      for (int64_t i = 0; i < sp.inner; ++i)
        out->value[o * sp.inner + i] += av[(o * sp.n + k) * sp.inner + i];
  return detail::finish("reduce_sum", out, {a.node()},
                        [self = out.get(), an = a.node(), sp] {
    const real* g = self->grad.data();
    real* ga = an->grad_data();
    for (int64_t o = 0; o < sp.outer; ++o)
      for (int64_t k = 0; k < sp.n; ++k)
        for (int64_t i = 0; i < sp.inner; ++i)
          ga[(o * sp.n + k) * sp.inner + i] += g[o * sp.inner + i];
  });
}

inline Tensor reduce_mean(const Tensor& a, size_t axis) {
  auto sp = detail::axis_span("reduce_mean", a.shape(), axis);
  Tensor s = reduce_sum(a, axis);
  return mul(s, real(1) / static_cast<real>(sp.n));
}

inline Tensor reduce_min(const Tensor& a, size_t axis) {
  auto sp = detail::axis_span("reduce_min", a.shape(), axis);
  auto out = detail::make_node(detail::drop_axis(a.shape(), axis));
  const auto& av = a.data();
  std::vector<int64_t> argmin(out->value.size(), 0);
  for (int64_t o = 0; o < sp.outer; ++o)
    for (int64_t i = 0; i < sp.inner; ++i) {
      int64_t best = 0;
      real bv = av[(o * sp.n) * sp.inner + i];
      for (int64_t k = 1; k < sp.n; ++k) {
        real v = av[(o * sp.n + k) * sp.inner + i];
        if (v < bv) {
          bv = v;
          best = k;
        }
      }
      out->value[o * sp.inner + i] = bv;
      argmin[o * sp.inner + i] = best;
    }
  return detail::finish("reduce_min", out, {a.node()},
                        [self = out.get(), an = a.node(), sp,
                         argmin = std::move(argmin)] {
    const real* g = self->grad.data();
    real* ga = an->grad_data();
    for (int64_t o = 0; o < sp.outer; ++o)
      for (int64_t i = 0; i < sp.inner; ++i) {
        int64_t k = argmin[o * sp.inner + i];
        ga[(o * sp.n + k) * sp.inner + i] += g[o * sp.inner + i];
      }
  });
}

// ---- shape manipulation ----

inline Tensor reshape(const Tensor& a, Shape s) {
  require(numel(s) == a.size(), "reshape: cannot view " +
          shape_str(a.shape()) + " as " + shape_str(s));
  auto out = detail::make_node(std::move(s));
  out->value = a.data();
  return detail::finish("reshape", out, {a.node()},
                        [self = out.get(), an = a.node()] {
    const real* g = self->grad.data();
    real* ga = an->grad_data();
    for (size_t i = 0; i < self->value.size(); ++i) ga[i] += g[i];
  });
}

inline Tensor transpose(const Tensor& a) {
  require(a.rank() == 2, "transpose: expected rank 2, got " +
          shape_str(a.shape()));
  const int64_t m = a.dim(0), n = a.dim(1);
  auto out = detail::make_node(Shape{n, m});
  const auto& av = a.data();
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) out->value[j * m + i] = av[i * n + j];
  return detail::finish("transpose", out, {a.node()},
                        [self = out.get(), an = a.node(), m, n] {
    const real* g = self->grad.data();
    real* ga = an->grad_data();
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
  });
}

inline Tensor concat(const std::vector<Tensor>& parts, size_t axis) {
  require(!parts.empty(), "concat: no inputs");
  Shape s = parts[0].shape();
  require(axis < s.size(), "concat: axis out of range");
  int64_t total = 0;
  for (const auto& p : parts) {
    require(p.rank() == s.size(), "concat: rank mismatch");
    for (size_t i = 0; i < s.size(); ++i)
      if (i != axis)
        require(p.dim(i) == s[i], "concat: shapes differ off-axis: " +
                shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
    total += p.dim(axis);
  }
  s[axis] = total;
  auto sp = detail::axis_span("concat", s, axis);
  auto out = detail::make_node(s);
  std::vector<detail::NodePtr> parents;
  int64_t off = 0;
  for (const auto& p : parts) {
    const int64_t pn = p.dim(axis);
    const auto& pv = p.data();
    for (int64_t o = 0; o < sp.outer; ++o)
      for (int64_t k = 0; k < pn; ++k)
        for (int64_t i = 0; i < sp.inner; ++i)
          out->value[(o * sp.n + off + k) * sp.inner + i] =
              pv[(o * pn + k) * sp.inner + i];
    off += pn;
    parents.push_back(p.node());
  }
  return detail::finish("concat", out, parents,
                        [self = out.get(), parents, sp] {
    const real* g = self->grad.data();
    int64_t off = 0;
    for (const auto& pn_node : parents) {
      const int64_t pn = pn_node->value.size() / (sp.outer * sp.inner);
      if (pn_node->requires_grad) {
        real* gp = pn_node->grad_data();
        for (int64_t o = 0; o < sp.outer; ++o)
          for (int64_t k = 0; k < pn; ++k)
            for (int64_t i = 0; i < sp.inner; ++i)
              gp[(o * pn + k) * sp.inner + i] +=
                  g[(o * sp.n + off + k) * sp.inner + i];
      }
      off += pn;
    }
  });
}

inline Tensor slice(const Tensor& a, size_t axis, int64_t start, int64_t len) {
  auto sp = detail::axis_span("slice", a.shape(), axis);
  require(start >= 0 && len > 0 && start + len <= sp.n,
          "slice: range [" + std::to_string(start) + "," +
          std::to_string(start + len) + ") out of bounds for axis size " +
          std::to_string(sp.n));
  Shape s = a.shape();
  s[axis] = len;
  auto out = detail::make_node(s);
  const auto& av = a.data();
  for (int64_t o = 0; o < sp.outer; ++o)
    for (int64_t k = 0; k < len; ++k)
      for (int64_t i = 0; i < sp.inner; ++i)
        out->value[(o * len + k) * sp.inner + i] =
            av[(o * sp.n + start + k) * sp.inner + i];
  return detail::finish("slice", out, {a.node()},
                        [self = out.get(), an = a.node(), sp, start, len] {
    const real* g = self->grad.data();
    real* ga = an->grad_data();
    for (int64_t o = 0; o < sp.outer; ++o)
      for (int64_t k = 0; k < len; ++k)
        for (int64_t i = 0; i < sp.inner; ++i)
          ga[(o * sp.n + start + k) * sp.inner + i] +=
              g[(o * len + k) * sp.inner + i];
  });
}

}  // namespace sfmk
