#include "polyrec/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace polyrec::ad {

const Vector& Var::value() const { return tape->value(*this); }
double Var::scalar() const {
  const auto& v = value();
  if (v.size() != 1) throw DimensionError("Var::scalar on a vector payload");
  return v[0];
}
std::size_t Var::size() const { return value().size(); }

Var Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::leaf(Vector v) {
  Node n;
  n.op = Op::leaf;
  n.value = std::move(v);
  n.needs_grad = true;
  return push(std::move(n));
}

Var Tape::constant(Vector v) {
  Node n;
  n.op = Op::constant;
  n.value = std::move(v);
  return push(std::move(n));
}

Vector Tape::grad(Var v) const {
  const auto& n = nodes_[v.id];
  if (n.grad.empty()) return Vector(n.value.size(), 0.0);
  return n.grad;
}

Vector& Tape::grad_buffer(int id) {
  auto& n = nodes_[id];
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

void Tape::accumulate(int id, std::size_t i, double g) { grad_buffer(id)[i] += g; }

namespace {

Tape& same_tape(Var a, Var b) {
  if (a.tape != b.tape || a.tape == nullptr) throw std::invalid_argument("autodiff: operands on different tapes");
  return *a.tape;
}

bool needs(const Tape& t, int id) { return id >= 0 && t.node(id).needs_grad; }

Tape::Node make(Op op, Var a, Vector value, bool ng) {
  Tape::Node n;
  n.op = op;
  n.a = a.id;
  n.value = std::move(value);
  n.needs_grad = ng;
  return n;
}

std::size_t broadcast_size(std::size_t na, std::size_t nb) {
  if (na == nb) return na;
  if (na == 1) return nb;
  if (nb == 1) return na;
  throw DimensionError("autodiff: incompatible operand lengths");
}

template <class F>
Var binary(Op op, Var a, Var b, F f) {
  Tape& t = same_tape(a, b);
  const auto& va = t.value(a);
  const auto& vb = t.value(b);
  std::size_t n = broadcast_size(va.size(), vb.size());
  Vector out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = f(va[va.size() == 1 ? 0 : i], vb[vb.size() == 1 ? 0 : i]);
  Tape::Node node = make(op, a, std::move(out), needs(t, a.id) || needs(t, b.id));
  node.b = b.id;
  return t.push(std::move(node));
}

template <class F>
Var unary(Op op, Var a, F f, double c = 0.0) {
  Tape& t = *a.tape;
  const auto& va = t.value(a);
  Vector out(va.size());
  for (std::size_t i = 0; i < va.size(); ++i) out[i] = f(va[i]);
  Tape::Node node = make(op, a, std::move(out), needs(t, a.id));
  node.c = c;
  return t.push(std::move(node));
}

}  // namespace

double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

double gelu_derivative(double x) {
  const double inv_sqrt2pi = 0.3989422804014327;
  return 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))) + x * inv_sqrt2pi * std::exp(-0.5 * x * x);
}

Var add(Var a, Var b) { return binary(Op::add, a, b, [](double x, double y) { return x + y; }); }
Var sub(Var a, Var b) { return binary(Op::sub, a, b, [](double x, double y) { return x - y; }); }
Var mul(Var a, Var b) { return binary(Op::mul, a, b, [](double x, double y) { return x * y; }); }
Var div(Var a, Var b) { return binary(Op::div, a, b, [](double x, double y) { return x / y; }); }
Var neg(Var a) { return unary(Op::neg, a, [](double x) { return -x; }); }
Var scale(Var a, double c) { return unary(Op::scale, a, [c](double x) { return c * x; }, c); }
Var add_scalar(Var a, double c) { return unary(Op::add_scalar, a, [c](double x) { return x + c; }, c); }
Var abs(Var a) { return unary(Op::abs, a, [](double x) { return std::abs(x); }); }
Var exp(Var a) { return unary(Op::exp, a, [](double x) { return std::exp(x); }); }

Var log(Var a) {
  for (double v : a.value())
    if (!(v > 0.0)) throw std::domain_error("autodiff: log of nonpositive value");
  return unary(Op::log, a, [](double x) { return std::log(x); });
}

Var sqrt(Var a) {
  for (double v : a.value())
    if (!(v >= 0.0)) throw std::domain_error("autodiff: sqrt of negative value");
  return unary(Op::sqrt, a, [](double x) { return std::sqrt(x); });
}

Var gelu(Var a) { return unary(Op::gelu, a, gelu_value); }

Var clamp_below(Var a, double floor) {
  return unary(Op::clamp_below, a, [floor](double x) { return x > floor ? x : floor; }, floor);
}

namespace {
Var reduce_at(Op op, Var a, std::size_t idx) {
  Tape& t = *a.tape;
  Tape::Node node = make(op, a, Vector{t.value(a)[idx]}, needs(t, a.id));
  node.index = {idx};
  return t.push(std::move(node));
}
}  // namespace

Var min_reduce(Var a) {
  const auto& v = a.value();
  if (v.empty()) throw DimensionError("min_reduce of empty vector");
  // first attaining index
  std::size_t idx = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] < v[idx]) idx = i;
  return reduce_at(Op::min_reduce, a, idx);
}

Var max_reduce(Var a) {
  const auto& v = a.value();
  if (v.empty()) throw DimensionError("max_reduce of empty vector");
  std::size_t idx = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[idx]) idx = i;
  return reduce_at(Op::max_reduce, a, idx);
}

namespace {
// stable descending order: ties keep the lower index first
std::vector<std::size_t> desc_order(const Vector& v) {
  std::vector<std::size_t> p(v.size());
  std::iota(p.begin(), p.end(), 0);
  std::stable_sort(p.begin(), p.end(), [&](std::size_t x, std::size_t y) { return v[x] > v[y]; });
  return p;
}
}  // namespace

Var kth_largest(Var a, std::size_t k) {
  const auto& v = a.value();
  if (k == 0 || k > v.size()) throw DimensionError("kth_largest: k out of range");
  std::vector<std::size_t> p(v.size());
  std::iota(p.begin(), p.end(), 0);
  auto cmp = [&](std::size_t x, std::size_t y) { return v[x] > v[y] || (v[x] == v[y] && x < y); };
  std::nth_element(p.begin(), p.begin() + (k - 1), p.end(), cmp);
  return reduce_at(Op::kth_largest, a, p[k - 1]);
}

Var sort_desc(Var a) {
  Tape& t = *a.tape;
  const auto& v = t.value(a);
  auto p = desc_order(v);
  Vector out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[p[i]];
  Tape::Node node = make(Op::sort_desc, a, std::move(out), needs(t, a.id));
  node.index = std::move(p);
  return t.push(std::move(node));
}

Var sum(Var a) {
  const auto& v = a.value();
  double s = 0.0;
  for (double x : v) s += x;
  Tape& t = *a.tape;
  return t.push(make(Op::sum, a, Vector{s}, needs(t, a.id)));
}

Var mean(Var a) {
  const auto& v = a.value();
  if (v.empty()) throw DimensionError("mean of empty vector");
  double s = 0.0;
  for (double x : v) s += x;
  Tape& t = *a.tape;
  return t.push(make(Op::mean, a, Vector{s / v.size()}, needs(t, a.id)));
}

Var matvec_t(Var w, Var x, std::size_t rows, std::size_t cols) {
  Tape& t = same_tape(w, x);
  const auto& vw = t.value(w);
  const auto& vx = t.value(x);
  if (vw.size() != rows * cols || vx.size() != rows) throw DimensionError("matvec_t: shape mismatch");
  Vector out(cols, 0.0);
  for (std::size_t i = 0; i < rows; ++i) {
    double xi = vx[i];
    const double* row = vw.data() + i * cols;
    for (std::size_t j = 0; j < cols; ++j) out[j] += row[j] * xi;
  }
  Tape::Node node = make(Op::matvec_t, w, std::move(out), needs(t, w.id) || needs(t, x.id));
  node.b = x.id;
  node.i0 = rows;
  node.i1 = cols;
  return t.push(std::move(node));
}

Var element(Var a, std::size_t i) {
  if (i >= a.size()) throw DimensionError("element: index out of range");
  return reduce_at(Op::element, a, i);
}

Var slice(Var a, std::size_t offset, std::size_t len) {
  Tape& t = *a.tape;
  const auto& v = t.value(a);
  if (offset + len > v.size()) throw DimensionError("slice: out of range");
  Tape::Node node = make(Op::slice, a, Vector(v.begin() + offset, v.begin() + offset + len), needs(t, a.id));
  node.i0 = offset;
  return t.push(std::move(node));
}

Var concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat of nothing");
  Tape& t = *parts[0].tape;
  Tape::Node node;
  node.op = Op::concat;
  for (auto p : parts) {
    if (p.tape != &t) throw std::invalid_argument("autodiff: operands on different tapes");
    const auto& v = t.value(p);
    node.value.insert(node.value.end(), v.begin(), v.end());
    node.parents.push_back(p.id);
    node.needs_grad = node.needs_grad || needs(t, p.id);
  }
  return t.push(std::move(node));
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw std::invalid_argument("backward: loss on another tape");
  if (nodes_[loss.id].value.size() != 1) throw DimensionError("backward: loss must be scalar");
  for (auto& n : nodes_) n.grad.clear();
  grad_buffer(loss.id)[0] = 1.0;
  visited_ = 0;

  for (int id = loss.id; id >= 0; --id) {
    ++visited_;
    Node& n = nodes_[id];
    if (!n.needs_grad || n.grad.empty()) continue;
    const Vector g = n.grad;  // copy: parents may alias
    auto bcast = [&](int pid, auto&& local) {
      if (!needs(*this, pid)) return;
      auto& pg = grad_buffer(pid);
      for (std::size_t i = 0; i < g.size(); ++i) pg[pg.size() == 1 ? 0 : i] += g[i] * local(i);
    };
    auto at = [&](int pid, std::size_t i) {
      const auto& v = nodes_[pid].value;
      return v[v.size() == 1 ? 0 : i];
    };
    switch (n.op) {
      case Op::leaf:
      case Op::constant:
        break;
      case Op::add:
        bcast(n.a, [](std::size_t) { return 1.0; });
        bcast(n.b, [](std::size_t) { return 1.0; });
        break;
      case Op::sub:
        bcast(n.a, [](std::size_t) { return 1.0; });
        bcast(n.b, [](std::size_t) { return -1.0; });
        break;
      case Op::mul: {
        int a = n.a, b = n.b;
        bcast(a, [&](std::size_t i) { return at(b, i); });
        bcast(b, [&](std::size_t i) { return at(a, i); });
        break;
      }
      case Op::div: {
        int a = n.a, b = n.b;
        bcast(a, [&](std::size_t i) { return 1.0 / at(b, i); });
        bcast(b, [&](std::size_t i) {
          double y = at(b, i);
          return -at(a, i) / (y * y);
        });
        break;
      }
      case Op::neg:
        bcast(n.a, [](std::size_t) { return -1.0; });
        break;
      case Op::scale: {
        double c = n.c;
        bcast(n.a, [c](std::size_t) { return c; });
        break;
      }
      case Op::add_scalar:
        bcast(n.a, [](std::size_t) { return 1.0; });
        break;
      case Op::abs: {
        int a = n.a;
        bcast(a, [&](std::size_t i) {
          double x = at(a, i);
          return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0);
        });
        break;
      }
      case Op::exp: {
        const Vector& out = n.value;
        bcast(n.a, [&](std::size_t i) { return out[i]; });
        break;
      }
      case Op::log: {
        int a = n.a;
        bcast(a, [&](std::size_t i) { return 1.0 / at(a, i); });
        break;
      }
      case Op::sqrt: {
        const Vector& out = n.value;
        bcast(n.a, [&](std::size_t i) { return 0.5 / out[i]; });
        break;
      }
      case Op::gelu: {
        int a = n.a;
        bcast(a, [&](std::size_t i) { return gelu_derivative(at(a, i)); });
        break;
      }
      case Op::clamp_below: {
        int a = n.a;
        double floor = n.c;
        bcast(a, [&](std::size_t i) { return at(a, i) > floor ? 1.0 : 0.0; });
        break;
      }
      case Op::min_reduce:
      case Op::max_reduce:
      case Op::kth_largest:
      case Op::element:
        if (needs(*this, n.a)) accumulate(n.a, n.index[0], g[0]);
        break;
      case Op::sort_desc:
        if (needs(*this, n.a)) {
          auto& pg = grad_buffer(n.a);
          for (std::size_t i = 0; i < g.size(); ++i) pg[n.index[i]] += g[i];
        }
        break;
      case Op::sum:
        if (needs(*this, n.a)) {
          auto& pg = grad_buffer(n.a);
          for (auto& v : pg) v += g[0];
        }
        break;
      case Op::mean:
        if (needs(*this, n.a)) {
          auto& pg = grad_buffer(n.a);
          double s = g[0] / pg.size();
          for (auto& v : pg) v += s;
        }
        break;
      case Op::matvec_t: {
        std::size_t rows = n.i0, cols = n.i1;
        if (needs(*this, n.a)) {
          auto& gw = grad_buffer(n.a);
          const auto& x = nodes_[n.b].value;
          for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < cols; ++j) gw[i * cols + j] += x[i] * g[j];
        }
        if (needs(*this, n.b)) {
          auto& gx = grad_buffer(n.b);
          const auto& w = nodes_[n.a].value;
          for (std::size_t i = 0; i < rows; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < cols; ++j) s += w[i * cols + j] * g[j];
            gx[i] += s;
          }
        }
        break;
      }
      case Op::slice:
        if (needs(*this, n.a)) {
          auto& pg = grad_buffer(n.a);
          for (std::size_t i = 0; i < g.size(); ++i) pg[n.i0 + i] += g[i];
        }
        break;
      case Op::concat: {
        std::size_t off = 0;
        for (int pid : n.parents) {
          std::size_t len = nodes_[pid].value.size();
          if (needs(*this, pid)) {
            auto& pg = grad_buffer(pid);
            for (std::size_t i = 0; i < len; ++i) pg[i] += g[off + i];
          }
          off += len;
        }
        break;
      }
    }
  }
}

GradcheckReport gradcheck(const TapeProgram& f, const Vector& point, double h, double tol) {
  GradcheckReport rep;
  Tape t;
  Var x = t.leaf(point);
  Var y = f(t, x);
  double f0 = y.scalar();
  t.backward(y);
  Vector g = t.grad(x);

  auto eval = [&](const Vector& p) {
    Tape tt;
    return f(tt, tt.leaf(p)).scalar();
  };
  rep.rel_errors.assign(point.size(), 0.0);
  double floor = 1e-6 * std::max(1.0, std::abs(f0));
  for (std::size_t i = 0; i < point.size(); ++i) {
    double hi = h * std::max(1.0, std::abs(point[i]));
    Vector p = point;
    p[i] = point[i] + hi;
    double fp = eval(p);
    p[i] = point[i] - hi;
    double fm = eval(p);
    double fwd = (fp - f0) / hi, bwd = (f0 - fm) / hi;
    double fd = (fp - fm) / (2 * hi);
    // one-sided slopes that disagree at O(1) mark a kink inside the stencil
    if (std::abs(fwd - bwd) > 1e-2 * std::max({1.0, std::abs(fwd), std::abs(bwd)})) {
      rep.excluded.push_back(i);
      continue;
    }
    // differences below the rounding noise of the quotient cannot be resolved
    double noise = 16 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(f0)) / hi;
    double err = std::abs(g[i] - fd) / std::max({std::abs(g[i]), std::abs(fd), floor, noise / tol});
    rep.rel_errors[i] = err;
    rep.max_rel_error = std::max(rep.max_rel_error, err);
  }
  rep.passed = rep.max_rel_error <= tol;
  return rep;
}

}  // namespace polyrec::ad
