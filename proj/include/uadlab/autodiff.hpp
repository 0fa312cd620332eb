#pragma once

// Taped reverse-mode differentiation over dense double tensors.
//
// A Tape records every primitive application of one forward pass. Leaves are
// either parameters (gradients flow into them) or constants (they do not).
// backward() walks the tape once in reverse and returns the gradient of a
// scalar loss with respect to every node that both requires a gradient and
// is reachable from the loss. The tape is meant to be thrown away afterwards.
//
// Broadcasting is restricted to the two cases the models need: a size-1
// operand, or an operand whose shape is a trailing suffix of the other's
// (e.g. a [d] bias added to a [B, d] batch).

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "tensor.hpp"

namespace uadlab::diff {

using NodeId = std::size_t;
inline constexpr NodeId kNoNode = std::numeric_limits<NodeId>::max();

enum class Op : std::uint8_t {
  parameter,
  constant,
  matmul,
  add,
  sub,
  mul,
  scale,
  exp,
  log,
  tanh,
  relu,
  sigmoid,
  softplus,
  square,
  sum,
  sum_last,
  mean,
  broadcast,
  reshape,
  slice,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::parameter: return "parameter";
    case Op::constant: return "constant";
    case Op::matmul: return "matmul";
    case Op::add: return "add";
    case Op::sub: return "sub";
    case Op::mul: return "mul_elementwise";
    case Op::scale: return "scale";
    case Op::exp: return "exp";
    case Op::log: return "log";
    case Op::tanh: return "tanh";
    case Op::relu: return "relu";
    case Op::sigmoid: return "sigmoid";
    case Op::softplus: return "softplus";
    case Op::square: return "square";
    case Op::sum: return "sum";
    case Op::sum_last: return "sum_last";
    case Op::mean: return "mean";
    case Op::broadcast: return "broadcast";
    case Op::reshape: return "reshape";
    case Op::slice: return "slice";
  }
  return "?";
}

class Tape;

// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  NodeId id = kNoNode;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
};

class Tape {
 public:
  struct Entry {
    Op op;
    NodeId a = kNoNode;
    NodeId b = kNoNode;
    double scalar = 0.0;
    std::size_t axis = 0;
    std::size_t begin = 0;
    std::size_t end = 0;
    bool requires_grad = false;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var parameter(Tensor value) {
    Entry e{Op::parameter};
    e.requires_grad = true;
    return push(e, std::move(value));
  }
  Var constant(Tensor value) { return push(Entry{Op::constant}, std::move(value)); }
  Var constant(double v) { return constant(Tensor::scalar(v)); }

  const Tensor& value(NodeId id) const { return values_.at(id); }
  const Entry& entry(NodeId id) const { return entries_.at(id); }
  bool requires_grad(NodeId id) const { return entries_.at(id).requires_grad; }
  std::size_t size() const { return entries_.size(); }

  Var record(Entry e, Tensor out) {
    e.requires_grad = (e.a != kNoNode && entries_[e.a].requires_grad) ||
                      (e.b != kNoNode && entries_[e.b].requires_grad);
    return push(e, std::move(out));
  }

 private:
  Var push(Entry e, Tensor value) {
    entries_.push_back(e);
    values_.push_back(std::move(value));
    return Var{this, entries_.size() - 1};
  }

  std::vector<Entry> entries_;
  std::vector<Tensor> values_;
};

inline const Tensor& Var::value() const { return tape->value(id); }

// Gradients of one backward pass, indexed by node id. Nodes that were not
// reached (or are constants) have no entry.
class Gradients {
 public:
  explicit Gradients(std::size_t n) : grads_(n), present_(n, 0) {}

  bool has(NodeId id) const { return id < present_.size() && present_[id]; }
  bool has(Var v) const { return has(v.id); }

  const Tensor* find(Var v) const { return has(v) ? &grads_[v.id] : nullptr; }

  const Tensor& at(Var v) const {
    if (!has(v)) throw Error("no gradient for node " + std::to_string(v.id));
    return grads_[v.id];
  }

  void accumulate(NodeId id, Tensor g) {
    if (!present_[id]) {
      grads_[id] = std::move(g);
      present_[id] = 1;
      return;
    }
    auto dst = grads_[id].data();
    auto src = g.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }

  Tensor& mutable_at(NodeId id) { return grads_[id]; }
  void drop(NodeId id) { present_[id] = 0; grads_[id] = Tensor(); }

 private:
  std::vector<Tensor> grads_;
  std::vector<char> present_;
};

namespace detail {

[[noreturn]] inline void shape_fail(Op op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op_name(op)) + ": incompatible shapes " + shape_str(a) +
                   " and " + shape_str(b));
}

inline Tape& tape_of(Var a) {
  if (a.tape == nullptr) throw Error("operation on a detached Var");
  return *a.tape;
}

inline Tape& tape_of(Var a, Var b) {
  if (a.tape != b.tape) throw Error("operands live on different tapes");
  return tape_of(a);
}

// True if `small` can be broadcast into `big`: size 1, or a trailing suffix.
inline bool is_suffix(const Shape& small, const Shape& big) {
  if (shape_size(small) == 1) return true;
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

// C[m,n] = A[m,k] B[k,n]
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C[m,k] += G[m,n] B[k,n]^T
inline void gemm_nt(const double* g, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* gi = g + i * n;
    double* ci = c + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* bp = b + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += gi[j] * bp[j];
      ci[p] += acc;
    }
  }
}

// C[k,n] += A[m,k]^T G[m,n]
inline void gemm_tn(const double* a, const double* g, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* gi = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      double* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += av * gi[j];
    }
  }
}

template <typename F>
Var unary(Op op, Var a, F f, double scalar = 0.0) {
  Tape& t = tape_of(a);
  const Tensor& x = a.value();
  Tensor out(x.shape());
  auto src = x.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = f(src[i]);
  return t.record({op, a.id, kNoNode, scalar}, std::move(out));
}

template <typename F>
Var binary(Op op, Var a, Var b, F f) {
  Tape& t = tape_of(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  const bool x_big = x.size() >= y.size();
  const Tensor& big = x_big ? x : y;
  const Tensor& small = x_big ? y : x;
  if (!is_suffix(small.shape(), big.shape())) shape_fail(op, x.shape(), y.shape());
  Tensor out(big.shape());
  auto o = out.data();
  auto xs = x.data();
  auto ys = y.data();
  const std::size_t nx = xs.size();
  const std::size_t ny = ys.size();
  if (nx == ny) {
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(xs[i], ys[i]);
  } else {
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(xs[i % nx], ys[i % ny]);
  }
  return t.record({op, a.id, b.id}, std::move(out));
}

// Sums a full-size gradient back down to a broadcast operand of size n.
inline Tensor reduce_to(const Tensor& g, const Shape& shape) {
  const std::size_t n = shape_size(shape);
  if (n == g.size()) return g.reshaped(shape);
  Tensor out(shape);
  auto o = out.data();
  auto s = g.data();
  for (std::size_t i = 0; i < s.size(); ++i) o[i % n] += s[i];
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Primitives
// ---------------------------------------------------------------------------

inline Var matmul(Var a, Var b) {
  Tape& t = detail::tape_of(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.rank() != 2 || y.rank() != 2 || x.dim(1) != y.dim(0)) {
    detail::shape_fail(Op::matmul, x.shape(), y.shape());
  }
  const std::size_t m = x.dim(0), k = x.dim(1), n = y.dim(1);
  Tensor out(Shape{m, n});
  detail::gemm_nn(x.data().data(), y.data().data(), out.data().data(), m, k, n);
  return t.record({Op::matmul, a.id, b.id}, std::move(out));
}

inline Var add(Var a, Var b) {
  return detail::binary(Op::add, a, b, [](double u, double v) { return u + v; });
}
inline Var sub(Var a, Var b) {
  return detail::binary(Op::sub, a, b, [](double u, double v) { return u - v; });
}
inline Var mul(Var a, Var b) {
  return detail::binary(Op::mul, a, b, [](double u, double v) { return u * v; });
}
inline Var add(Var a, double c) { return add(a, detail::tape_of(a).constant(c)); }

inline Var scale(Var a, double c) {
  return detail::unary(Op::scale, a, [c](double u) { return c * u; }, c);
}

inline Var exp(Var a) {
  return detail::unary(Op::exp, a, [](double u) { return std::exp(u); });
}

inline Var log(Var a) {
  for (double v : a.value().data()) {
    if (!(v > 0.0)) {
      throw DomainError("log: non-positive input " + std::to_string(v) + " in tensor of shape " +
                        shape_str(a.shape()));
    }
  }
  return detail::unary(Op::log, a, [](double u) { return std::log(u); });
}

inline Var tanh(Var a) {
  return detail::unary(Op::tanh, a, [](double u) { return std::tanh(u); });
}
inline Var relu(Var a) {
  return detail::unary(Op::relu, a, [](double u) { return u > 0.0 ? u : 0.0; });
}
inline Var sigmoid(Var a) { return detail::unary(Op::sigmoid, a, detail::sigmoid); }
inline Var softplus(Var a) { return detail::unary(Op::softplus, a, detail::softplus); }
inline Var square(Var a) {
  return detail::unary(Op::square, a, [](double u) { return u * u; });
}

inline Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return detail::tape_of(a).record({Op::sum, a.id}, Tensor::scalar(s));
}

inline Var mean(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return detail::tape_of(a).record({Op::mean, a.id}, Tensor::scalar(s / static_cast<double>(a.size())));
}

// Reduces the trailing axis: [..., n] -> [...].
inline Var sum_last(Var a) {
  const Tensor& x = a.value();
  if (x.rank() == 0) throw ShapeError("sum_last: scalar input");
  const std::size_t n = x.shape().back();
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  Tensor out(out_shape);
  auto src = x.data();
  auto dst = out.data();
  for (std::size_t r = 0; r < dst.size(); ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += src[r * n + j];
    dst[r] = s;
  }
  return detail::tape_of(a).record({Op::sum_last, a.id}, std::move(out));
}

inline Var broadcast(Var a, const Shape& shape) {
  const Tensor& x = a.value();
  if (!detail::is_suffix(x.shape(), shape)) detail::shape_fail(Op::broadcast, x.shape(), shape);
  Tensor out(shape);
  auto src = x.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = src[i % src.size()];
  return detail::tape_of(a).record({Op::broadcast, a.id}, std::move(out));
}

inline Var reshape(Var a, const Shape& shape) {
  if (shape_size(shape) != a.size()) detail::shape_fail(Op::reshape, a.shape(), shape);
  return detail::tape_of(a).record({Op::reshape, a.id}, a.value().reshaped(shape));
}

// Keeps indices [begin, end) along `axis`.
inline Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end) {
  const Tensor& x = a.value();
  if (axis >= x.rank() || begin >= end || end > x.dim(axis)) {
    throw ShapeError("slice: axis " + std::to_string(axis) + " range [" + std::to_string(begin) +
                     ", " + std::to_string(end) + ") invalid for shape " + shape_str(x.shape()));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t extent = x.dim(axis);
  const std::size_t width = end - begin;
  Shape out_shape = x.shape();
  out_shape[axis] = width;
  Tensor out(out_shape);
  auto src = x.data();
  auto dst = out.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t k = 0; k < width; ++k) {
      const double* s = src.data() + (o * extent + begin + k) * inner;
      double* d = dst.data() + (o * width + k) * inner;
      std::copy(s, s + inner, d);
    }
  }
  return detail::tape_of(a).record({Op::slice, a.id, kNoNode, 0.0, axis, begin, end}, std::move(out));
}

// ---------------------------------------------------------------------------
// Reverse pass
// ---------------------------------------------------------------------------

inline Gradients backward(const Tape& tape, Var loss) {
  if (loss.tape != &tape) throw Error("backward: loss is not on this tape");
  if (loss.size() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  }
  Gradients grads(tape.size());
  if (!tape.requires_grad(loss.id)) return grads;
  grads.accumulate(loss.id, Tensor(loss.shape(), 1.0));

  for (NodeId id = loss.id + 1; id-- > 0;) {
    if (!grads.has(id)) continue;
    const Tape::Entry& e = tape.entry(id);
    if (e.op == Op::parameter || e.op == Op::constant) continue;
    const Tensor& g = grads.mutable_at(id);
    const Tensor& out = tape.value(id);
    const bool need_a = e.a != kNoNode && tape.requires_grad(e.a);
    const bool need_b = e.b != kNoNode && tape.requires_grad(e.b);

    auto elementwise = [&](auto df) {
      const Tensor& x = tape.value(e.a);
      Tensor ga(x.shape());
      auto gx = ga.data();
      auto xs = x.data();
      auto ys = out.data();
      auto gs = g.data();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = gs[i] * df(xs[i], ys[i]);
      grads.accumulate(e.a, std::move(ga));
    };

    switch (e.op) {
      case Op::matmul: {
        const Tensor& x = tape.value(e.a);
        const Tensor& y = tape.value(e.b);
        const std::size_t m = x.dim(0), k = x.dim(1), n = y.dim(1);
        if (need_a) {
          Tensor ga(x.shape());
          detail::gemm_nt(g.data().data(), y.data().data(), ga.data().data(), m, k, n);
          grads.accumulate(e.a, std::move(ga));
        }
        if (need_b) {
          Tensor gb(y.shape());
          detail::gemm_tn(x.data().data(), g.data().data(), gb.data().data(), m, k, n);
          grads.accumulate(e.b, std::move(gb));
        }
        break;
      }
      case Op::add:
      case Op::sub: {
        if (need_a) grads.accumulate(e.a, detail::reduce_to(g, tape.value(e.a).shape()));
        if (need_b) {
          Tensor gb = detail::reduce_to(g, tape.value(e.b).shape());
          if (e.op == Op::sub) {
            for (double& v : gb.data()) v = -v;
          }
          grads.accumulate(e.b, std::move(gb));
        }
        break;
      }
      case Op::mul: {
        const Tensor& x = tape.value(e.a);
        const Tensor& y = tape.value(e.b);
        const std::size_t nx = x.size(), ny = y.size();
        auto gs = g.data();
        if (need_a) {
          Tensor full(g.shape());
          auto f = full.data();
          for (std::size_t i = 0; i < f.size(); ++i) f[i] = gs[i] * y[i % ny];
          grads.accumulate(e.a, detail::reduce_to(full, x.shape()));
        }
        if (need_b) {
          Tensor full(g.shape());
          auto f = full.data();
          for (std::size_t i = 0; i < f.size(); ++i) f[i] = gs[i] * x[i % nx];
          grads.accumulate(e.b, detail::reduce_to(full, y.shape()));
        }
        break;
      }
      case Op::scale: {
        const double c = e.scalar;
        elementwise([c](double, double) { return c; });
        break;
      }
      case Op::exp: elementwise([](double, double y) { return y; }); break;
      case Op::log: elementwise([](double x, double) { return 1.0 / x; }); break;
      case Op::tanh: elementwise([](double, double y) { return 1.0 - y * y; }); break;
      case Op::relu: elementwise([](double x, double) { return x > 0.0 ? 1.0 : 0.0; }); break;
      case Op::sigmoid: elementwise([](double, double y) { return y * (1.0 - y); }); break;
      case Op::softplus: elementwise([](double x, double) { return detail::sigmoid(x); }); break;
      case Op::square: elementwise([](double x, double) { return 2.0 * x; }); break;
      case Op::sum:
      case Op::mean: {
        const Tensor& x = tape.value(e.a);
        double v = g.item();
        if (e.op == Op::mean) v /= static_cast<double>(x.size());
        grads.accumulate(e.a, Tensor(x.shape(), v));
        break;
      }
      case Op::sum_last: {
        const Tensor& x = tape.value(e.a);
        const std::size_t n = x.shape().back();
        Tensor ga(x.shape());
        auto dst = ga.data();
        auto gs = g.data();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = gs[i / n];
        grads.accumulate(e.a, std::move(ga));
        break;
      }
      case Op::broadcast:
        grads.accumulate(e.a, detail::reduce_to(g, tape.value(e.a).shape()));
        break;
      case Op::reshape:
        grads.accumulate(e.a, g.reshaped(tape.value(e.a).shape()));
        break;
      case Op::slice: {
        const Tensor& x = tape.value(e.a);
        std::size_t outer = 1, inner = 1;
        for (std::size_t i = 0; i < e.axis; ++i) outer *= x.dim(i);
        for (std::size_t i = e.axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
        const std::size_t extent = x.dim(e.axis);
        const std::size_t width = e.end - e.begin;
        Tensor ga(x.shape());
        auto dst = ga.data();
        auto gs = g.data();
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t k = 0; k < width; ++k) {
            const double* s = gs.data() + (o * width + k) * inner;
            double* d = dst.data() + (o * extent + e.begin + k) * inner;
            std::copy(s, s + inner, d);
          }
        }
        grads.accumulate(e.a, std::move(ga));
        break;
      }
      case Op::parameter:
      case Op::constant:
        break;
    }
    // Interior gradients are not needed once propagated; parameters keep theirs.
    if (id != loss.id) grads.drop(id);
  }
  return grads;
}

}  // namespace uadlab::diff
