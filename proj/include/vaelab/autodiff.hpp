#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace vaelab::ad {

// Flat tape for reverse-mode differentiation of scalar expressions.
// Nodes are appended in evaluation order, so one reverse sweep over the
// tape accumulates adjoints. Values live in a parallel array to keep the
// node records small.
class Tape {
 public:
  enum class Op : std::uint8_t {
    Leaf,   // independent variable
    Const,  // constant, no adjoint flow
    Add, Sub, Mul, Div,
    Neg, Exp, Log, Tanh, Sqrt, Square,
    AddC, MulC,  // node + aux, node * aux
  };

  int leaf(double v) { return push(Op::Leaf, -1, -1, 0.0, v); }
  int constant(double v) { return push(Op::Const, -1, -1, 0.0, v); }

  int add(int a, int b) { return push(Op::Add, a, b, 0.0, val_[a] + val_[b]); }
  int sub(int a, int b) { return push(Op::Sub, a, b, 0.0, val_[a] - val_[b]); }
  int mul(int a, int b) { return push(Op::Mul, a, b, 0.0, val_[a] * val_[b]); }
  int div(int a, int b) { return push(Op::Div, a, b, 0.0, val_[a] / val_[b]); }
  int neg(int a) { return push(Op::Neg, a, -1, 0.0, -val_[a]); }
  int exp_(int a) { return push(Op::Exp, a, -1, 0.0, std::exp(val_[a])); }
  int log_(int a) { return push(Op::Log, a, -1, 0.0, std::log(val_[a])); }
  int tanh_(int a) { return push(Op::Tanh, a, -1, 0.0, std::tanh(val_[a])); }
  int sqrt_(int a) { return push(Op::Sqrt, a, -1, 0.0, std::sqrt(val_[a])); }
  int square(int a) { return push(Op::Square, a, -1, 0.0, val_[a] * val_[a]); }
  int add_c(int a, double c) { return push(Op::AddC, a, -1, c, val_[a] + c); }
  int mul_c(int a, double c) { return push(Op::MulC, a, -1, c, val_[a] * c); }
  // value pinned to target, unit gradient to a (detached shift)
  int shift_to(int a, double target) { return push(Op::AddC, a, -1, target - val_[a], target); }

  double value(int i) const { return val_[static_cast<std::size_t>(i)]; }
  double adjoint(int i) const { return adj_[static_cast<std::size_t>(i)]; }
  std::size_t size() const { return nodes_.size(); }

  /// Seeds d(root)/d(root) = 1 and sweeps the tape once.
  void backward(int root) {
    adj_.assign(nodes_.size(), 0.0);
    adj_[static_cast<std::size_t>(root)] = 1.0;
    for (int i = root; i >= 0; --i) {
      const double g = adj_[static_cast<std::size_t>(i)];
      if (g == 0.0) continue;
      const Node& nd = nodes_[static_cast<std::size_t>(i)];
      switch (nd.op) {
        case Op::Leaf:
        case Op::Const:
          break;
        case Op::Add:
          adj_[nd.a] += g;
          adj_[nd.b] += g;
          break;
        case Op::Sub:
          adj_[nd.a] += g;
          adj_[nd.b] -= g;
          break;
        case Op::Mul:
          adj_[nd.a] += g * val_[nd.b];
          adj_[nd.b] += g * val_[nd.a];
          break;
        case Op::Div:
          adj_[nd.a] += g / val_[nd.b];
          adj_[nd.b] -= g * val_[static_cast<std::size_t>(i)] / val_[nd.b];
          break;
        case Op::Neg:
          adj_[nd.a] -= g;
          break;
        case Op::Exp:
          adj_[nd.a] += g * val_[static_cast<std::size_t>(i)];
          break;
        case Op::Log:
          adj_[nd.a] += g / val_[nd.a];
          break;
        case Op::Tanh: {
          const double t = val_[static_cast<std::size_t>(i)];
          adj_[nd.a] += g * (1.0 - t * t);
          break;
        }
        case Op::Sqrt:
          adj_[nd.a] += g * 0.5 / val_[static_cast<std::size_t>(i)];
          break;
        case Op::Square:
          adj_[nd.a] += g * 2.0 * val_[nd.a];
          break;
        case Op::AddC:
          adj_[nd.a] += g;
          break;
        case Op::MulC:
          adj_[nd.a] += g * nd.aux;
          break;
      }
    }
  }

  void clear() {
    nodes_.clear();
    val_.clear();
    adj_.clear();
  }

  void reserve(std::size_t n) {
    nodes_.reserve(n);
    val_.reserve(n);
  }

 private:
  struct Node {
    Op op;
    std::int32_t a;
    std::int32_t b;
    double aux;
  };

  int push(Op op, int a, int b, double aux, double v) {
    nodes_.push_back(Node{op, a, b, aux});
    val_.push_back(v);
    return static_cast<int>(nodes_.size()) - 1;
  }

  std::vector<Node> nodes_;
  std::vector<double> val_;
  std::vector<double> adj_;
};

// Value handle with operator sugar so numeric code reads normally.
struct Var {
  Tape* tape = nullptr;
  int i = -1;

  double value() const { return tape->value(i); }
  double adjoint() const { return tape->adjoint(i); }
};

inline Var operator+(Var a, Var b) { return {a.tape, a.tape->add(a.i, b.i)}; }
inline Var operator-(Var a, Var b) { return {a.tape, a.tape->sub(a.i, b.i)}; }
inline Var operator*(Var a, Var b) { return {a.tape, a.tape->mul(a.i, b.i)}; }
inline Var operator/(Var a, Var b) { return {a.tape, a.tape->div(a.i, b.i)}; }
inline Var operator-(Var a) { return {a.tape, a.tape->neg(a.i)}; }

inline Var operator+(Var a, double c) { return {a.tape, a.tape->add_c(a.i, c)}; }
inline Var operator+(double c, Var a) { return a + c; }
inline Var operator-(Var a, double c) { return {a.tape, a.tape->add_c(a.i, -c)}; }
inline Var operator-(double c, Var a) { return {a.tape, a.tape->add_c(a.tape->neg(a.i), c)}; }
inline Var operator*(Var a, double c) { return {a.tape, a.tape->mul_c(a.i, c)}; }
inline Var operator*(double c, Var a) { return a * c; }
inline Var operator/(Var a, double c) { return {a.tape, a.tape->mul_c(a.i, 1.0 / c)}; }

inline Var& operator+=(Var& a, Var b) { a = a + b; return a; }
inline Var& operator-=(Var& a, Var b) { a = a - b; return a; }

inline Var exp(Var a) { return {a.tape, a.tape->exp_(a.i)}; }
inline Var log(Var a) { return {a.tape, a.tape->log_(a.i)}; }
inline Var tanh(Var a) { return {a.tape, a.tape->tanh_(a.i)}; }
inline Var sqrt(Var a) { return {a.tape, a.tape->sqrt_(a.i)}; }
inline Var square(Var a) { return {a.tape, a.tape->square(a.i)}; }

inline double square(double a) { return a * a; }
inline double value_of(double x) { return x; }
inline double value_of(Var x) { return x.value(); }

/// value(target) with the parameter sensitivity of c_hat: the gap is added
/// as a detached constant, so backward flows through c_hat only.
inline Var stop_gradient_shift(Var c_hat, double target_value) {
  return {c_hat.tape, c_hat.tape->shift_to(c_hat.i, target_value)};
}

}  // namespace vaelab::ad
