#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "polyrec/linalg.hpp"

namespace polyrec::ad {

class Tape;

// Handle to a tape node. Scalars are vectors of length 1.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Vector& value() const;
  double scalar() const;
  std::size_t size() const;
};

enum class Op {
  leaf, constant, add, sub, mul, div, neg, scale, add_scalar, abs, exp, log, sqrt, gelu,
  clamp_below, min_reduce, max_reduce, kth_largest, sort_desc, sum, mean, matvec_t,
  element, slice, concat
};

class Tape {
public:
  Var leaf(Vector v);
  Var leaf(double v) { return leaf(Vector{v}); }
  Var constant(Vector v);
  Var constant(double v) { return constant(Vector{v}); }

  const Vector& value(Var v) const { return nodes_[v.id].value; }
  // gradient of the last backward() loss; zeros for unreached nodes
  Vector grad(Var v) const;

  void backward(Var loss);
  std::size_t size() const { return nodes_.size(); }
  std::size_t visited() const { return visited_; }

  // internal: node construction used by the free functions below
  struct Node {
    Op op;
    int a = -1, b = -1;
    std::vector<int> parents;  // concat only
    Vector value;
    Vector grad;
    double c = 0.0;
    std::size_t i0 = 0, i1 = 0;
    std::vector<std::size_t> index;  // argmin/argmax/permutation
    bool needs_grad = false;
  };
  Var push(Node n);
  const Node& node(int id) const { return nodes_[id]; }

private:
  void accumulate(int id, std::size_t i, double g);
  Vector& grad_buffer(int id);

  std::vector<Node> nodes_;
  std::size_t visited_ = 0;
};

// elementwise, a size-1 operand broadcasts against the other
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var neg(Var a);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
Var abs(Var a);
Var exp(Var a);
Var log(Var a);
Var sqrt(Var a);
Var gelu(Var a);
Var clamp_below(Var a, double floor);

Var min_reduce(Var a);
Var max_reduce(Var a);
Var kth_largest(Var a, std::size_t k);  // k is 1-based
Var sort_desc(Var a);
Var sum(Var a);
Var mean(Var a);

// W is rows x cols row-major; returns W^T x (length cols)
Var matvec_t(Var w, Var x, std::size_t rows, std::size_t cols);

Var element(Var a, std::size_t i);
Var slice(Var a, std::size_t offset, std::size_t len);
Var concat(const std::vector<Var>& parts);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator-(Var a) { return neg(a); }
inline Var operator*(double c, Var a) { return scale(a, c); }
inline Var operator+(Var a, double c) { return add_scalar(a, c); }

double gelu_value(double x);
double gelu_derivative(double x);

struct GradcheckReport {
  double max_rel_error = 0.0;
  std::vector<double> rel_errors;     // per coordinate, 0 for excluded ones
  std::vector<std::size_t> excluded;  // coordinates sitting on a kink
  bool passed = false;
};

using TapeProgram = std::function<Var(Tape&, Var)>;

// Central differences with step h * max(1, |x_i|) against the tape gradient.
GradcheckReport gradcheck(const TapeProgram& f, const Vector& point, double h = 1e-5, double tol = 1e-6);

}  // namespace polyrec::ad
