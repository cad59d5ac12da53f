#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ipf/rng.hpp"

namespace ipf::ad {

enum class Op : uint8_t { leaf, add, sub, mul, div, neg, exp, log, sqrt, tanh, sigmoid, cmax };

class Tape;

/// Handle to one node on a Tape. Cheap to copy; invalid after tape.clear().
struct Value {
  int32_t idx = -1;
  Tape* tape = nullptr;
  double val() const;
};

/// Append-only scalar computation graph. Nodes are recorded in topological
/// order (parents precede children) with their forward value and the local
/// partial derivatives, so the reverse pass is a single backward sweep.
/// One tape has one owner; independent tapes are fully independent.
class Tape {
  struct Node {
    double val;
    double pa, pb;  // local partials w.r.t. parents a, b
    double adj;
    int32_t a, b;
    Op op;
  };

 public:
  Value leaf(double v) { return push(Op::leaf, v, -1, 0.0, -1, 0.0); }

  Value add(Value x, Value y) { return push(Op::add, at(x) + at(y), x.idx, 1.0, y.idx, 1.0); }
  Value sub(Value x, Value y) { return push(Op::sub, at(x) - at(y), x.idx, 1.0, y.idx, -1.0); }
  Value mul(Value x, Value y) {
    return push(Op::mul, at(x) * at(y), x.idx, at(y), y.idx, at(x));
  }
  Value div(Value x, Value y) {
    const double d = at(y);
    if (d == 0.0) throw std::domain_error("autodiff: division by exact zero");
    return push(Op::div, at(x) / d, x.idx, 1.0 / d, y.idx, -at(x) / (d * d));
  }
  Value neg(Value x) { return push(Op::neg, -at(x), x.idx, -1.0, -1, 0.0); }
  Value exp(Value x) {
    const double e = std::exp(at(x));
    return push(Op::exp, e, x.idx, e, -1, 0.0);
  }
  Value log(Value x) {
    const double v = at(x);
    if (!(v > 0.0)) throw std::domain_error("autodiff: log of non-positive value");
    return push(Op::log, std::log(v), x.idx, 1.0 / v, -1, 0.0);
  }
  Value sqrt(Value x) {
    const double v = at(x);
    if (v < 0.0) throw std::domain_error("autodiff: sqrt of negative value");
    const double r = std::sqrt(v);
    return push(Op::sqrt, r, x.idx, v == 0.0 ? HUGE_VAL : 0.5 / r, -1, 0.0);
  }
  Value tanh(Value x) {
    const double t = std::tanh(at(x));
    return push(Op::tanh, t, x.idx, 1.0 - t * t, -1, 0.0);
  }
  Value sigmoid(Value x) {
    const double v = at(x);
    double s;
    if (v >= 0.0) {
      s = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      s = e / (1.0 + e);
    }
    return push(Op::sigmoid, s, x.idx, s * (1.0 - s), -1, 0.0);
  }
  /// max of two values, treated as a constant in the reverse pass. Used to
  /// shift-stabilize softmax: softmax is shift-invariant, so freezing the
  /// shift leaves the gradient exact.
  Value cmax(Value x, Value y) {
    return push(Op::cmax, at(x) > at(y) ? at(x) : at(y), x.idx, 0.0, y.idx, 0.0);
  }

  double value(Value v) const { return nodes_[v.idx].val; }
  double adjoint(Value v) const { return nodes_[v.idx].adj; }

  void backward(Value out) {
    const double seed = 1.0;
    backward(std::span<const Value>(&out, 1), std::span<const double>(&seed, 1));
  }

  /// Reverse sweep from several outputs at once with caller-chosen seeds
  /// (e.g. per-quantile loss derivatives).
  void backward(std::span<const Value> outs, std::span<const double> seeds) {
    for (auto& n : nodes_) n.adj = 0.0;
    for (size_t k = 0; k < outs.size(); ++k) nodes_[outs[k].idx].adj += seeds[k];
    for (int32_t i = static_cast<int32_t>(nodes_.size()) - 1; i >= 0; --i) {
      const Node& n = nodes_[i];
      if (n.adj == 0.0) continue;
      if (n.a >= 0) nodes_[n.a].adj += n.adj * n.pa;
      if (n.b >= 0) nodes_[n.b].adj += n.adj * n.pb;
    }
  }

  void clear() { nodes_.clear(); }  // keeps capacity
  size_t size() const { return nodes_.size(); }
  void reserve(size_t n) { nodes_.reserve(n); }

 private:
  double at(Value v) const { return nodes_[v.idx].val; }

  Value push(Op op, double val, int32_t a, double pa, int32_t b, double pb) {
    if (!std::isfinite(val))
      throw std::domain_error("autodiff: non-finite value from primitive");
    nodes_.push_back(Node{val, pa, pb, 0.0, a, b, op});
    return Value{static_cast<int32_t>(nodes_.size()) - 1, this};
  }

  std::vector<Node> nodes_;
};

inline double Value::val() const { return tape->value(*this); }

inline Value operator+(Value x, Value y) { return x.tape->add(x, y); }
inline Value operator-(Value x, Value y) { return x.tape->sub(x, y); }
inline Value operator*(Value x, Value y) { return x.tape->mul(x, y); }
inline Value operator/(Value x, Value y) { return x.tape->div(x, y); }
inline Value operator-(Value x) { return x.tape->neg(x); }
inline Value operator+(Value x, double c) { return x + x.tape->leaf(c); }
inline Value operator+(double c, Value x) { return x.tape->leaf(c) + x; }
inline Value operator-(Value x, double c) { return x - x.tape->leaf(c); }
inline Value operator-(double c, Value x) { return x.tape->leaf(c) - x; }
inline Value operator*(Value x, double c) { return x * x.tape->leaf(c); }
inline Value operator*(double c, Value x) { return x.tape->leaf(c) * x; }

/// Overflow-free softplus. The branch is re-chosen on every build, so each
/// region stays inside the primitives' stable domain:
///   x >= 0:  x + log(1 + exp(-x))
///   x <  0:  log(1 + exp(x))
/// Both agree with log(1 + exp(x)) exactly and differentiate to sigmoid(x).
inline Value softplus(Value x) {
  Tape& t = *x.tape;
  if (x.val() >= 0.0) return t.add(x, t.log(t.add(t.leaf(1.0), t.exp(t.neg(x)))));
  return t.log(t.add(t.leaf(1.0), t.exp(x)));
}

/// Flat storage for trainable scalars. Parameter indices are stable for the
/// life of the model; gradients accumulate until zero_grads().
class ParamStore {
 public:
  int add(double init) {
    values_.push_back(init);
    grads_.push_back(0.0);
    return static_cast<int>(values_.size()) - 1;
  }
  size_t size() const { return values_.size(); }
  double value(int i) const { return values_[i]; }
  void set_value(int i, double v) { values_[i] = v; }
  double grad(int i) const { return grads_[i]; }
  void add_grad(int i, double g) { grads_[i] += g; }
  void zero_grads() { std::fill(grads_.begin(), grads_.end(), 0.0); }
  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::span<double> grads() { return grads_; }

 private:
  std::vector<double> values_;
  std::vector<double> grads_;
};

/// Builds one computation graph over a Tape, binding ParamStore entries to
/// leaf nodes on demand. reset() recycles both for the next sample without
/// reallocating.
class GraphBuilder {
 public:
  GraphBuilder(Tape& tape, ParamStore& params)
      : tape_(tape), params_(params), bound_(params.size(), -1) {}

  Value param(int i) {
    if (bound_[i] < 0) {
      bound_[i] = tape_.leaf(params_.value(i)).idx;
      touched_.push_back(i);
    }
    return Value{bound_[i], &tape_};
  }
  Value input(double v) { return tape_.leaf(v); }
  Value constant(double v) { return tape_.leaf(v); }
  Tape& tape() { return tape_; }

  /// After backward(): fold the tape adjoints of every bound parameter into
  /// the store's gradient accumulators.
  void accumulate_grads() {
    for (int i : touched_) params_.add_grad(i, tape_.adjoint(Value{bound_[i], &tape_}));
  }

  void reset() {
    for (int i : touched_) bound_[i] = -1;
    touched_.clear();
    tape_.clear();
  }

 private:
  Tape& tape_;
  ParamStore& params_;
  std::vector<int32_t> bound_;  // param index -> node index for this build
  std::vector<int> touched_;
};

/// Affine map y = Wx + b recorded on the tape. Holds parameter indices only;
/// the scalars live in a ParamStore.
struct DenseLayer {
  int in = 0, out = 0;
  int w0 = -1;  // row-major [out][in]
  int b0 = -1;

  static DenseLayer create(ParamStore& store, int in, int out, Rng& rng) {
    DenseLayer l;
    l.in = in;
    l.out = out;
    const double limit = std::sqrt(6.0 / (in + out));  // Glorot uniform
    l.w0 = static_cast<int>(store.size());
    for (int i = 0; i < out * in; ++i) store.add(rng.uniform(-limit, limit));
    l.b0 = static_cast<int>(store.size());
    for (int i = 0; i < out; ++i) store.add(0.0);
    return l;
  }

  int param_count() const { return out * in + out; }

  std::vector<Value> apply(GraphBuilder& g, std::span<const Value> x) const {
    if (static_cast<int>(x.size()) != in)
      throw std::invalid_argument("dense layer input width mismatch: got " +
                                  std::to_string(x.size()) + ", expected " +
                                  std::to_string(in));
    std::vector<Value> y;
    y.reserve(out);
    for (int o = 0; o < out; ++o) {
      Value acc = g.param(b0 + o);
      for (int i = 0; i < in; ++i) acc = acc + g.param(w0 + o * in + i) * x[i];
      y.push_back(acc);
    }
    return y;
  }
};

struct GradCheckResult {
  bool pass = false;
  double max_rel_err = 0.0;
  int worst_param = -1;
};

/// Compare reverse-mode gradients against central finite differences for
/// every parameter in the store. Relative error uses max(1, |analytic|) as
/// denominator. The builder must construct the same scalar function of the
/// current parameter values on each call.
inline GradCheckResult grad_check(ParamStore& params,
                                  const std::function<Value(GraphBuilder&)>& build,
                                  double step, double tol) {
  if (!(step > 0.0)) throw std::invalid_argument("grad_check: step must be positive");
  Tape tape;
  GraphBuilder g(tape, params);
  params.zero_grads();
  Value out = build(g);
  if (!std::isfinite(out.val())) throw std::domain_error("grad_check: non-finite function value");
  tape.backward(out);
  g.accumulate_grads();
  std::vector<double> analytic(params.size());
  for (size_t i = 0; i < params.size(); ++i) analytic[i] = params.grad(static_cast<int>(i));

  auto eval = [&] {
    g.reset();
    Value v = build(g);
    const double fv = v.val();
    if (!std::isfinite(fv)) throw std::domain_error("grad_check: non-finite function value");
    return fv;
  };

  GradCheckResult res;
  res.pass = true;
  for (size_t i = 0; i < params.size(); ++i) {
    const int pi = static_cast<int>(i);
    const double saved = params.value(pi);
    params.set_value(pi, saved + step);
    const double fp = eval();
    params.set_value(pi, saved - step);
    const double fm = eval();
    params.set_value(pi, saved);
    const double numeric = (fp - fm) / (2.0 * step);
    const double rel = std::fabs(analytic[i] - numeric) / std::max(1.0, std::fabs(analytic[i]));
    if (rel > res.max_rel_err) {
      res.max_rel_err = rel;
      res.worst_param = pi;
    }
  }
  g.reset();
  res.pass = res.max_rel_err <= tol;
  return res;
}

}  // namespace ipf::ad
