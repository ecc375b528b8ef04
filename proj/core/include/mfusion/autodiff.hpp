#pragma once

// Reverse-mode automatic differentiation over scalar computation graphs.
//
// Every arithmetic operation on Var appends one node to the owning Tape
// holding its value and the local partials with respect to at most two
// parents. Nodes are appended in evaluation order, so the node sequence is
// already topologically sorted and the reverse sweep is a single backward
// pass.

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace mfusion {

class Tape;

class Var {
 public:
  Var() = default;

  double value() const;
  std::uint32_t index() const { return index_; }
  Tape* tape() const { return tape_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::uint32_t index) : tape_(tape), index_(index) {}

  Tape* tape_ = nullptr;
  std::uint32_t index_ = 0;
};

class Tape {
 public:
  Var variable(double value);
  Var constant(double value) { return variable(value); }

  std::size_t size() const { return nodes_.size(); }
  double value(Var v) const { return nodes_[v.index()].value; }

  /// d(output)/d(wrt[i]) for each i. Throws NumericalError naming the first
  /// node whose forward value is not finite.
  std::vector<double> gradient(Var output, std::span<const Var> wrt) const;

  // Node constructors used by the operator overloads.
  Var unary(Var a, double value, double da);
  Var binary(Var a, Var b, double value, double da, double db);

 private:
  struct Node {
    double value;
    std::uint32_t parent[2];
    double partial[2];
    std::uint8_t arity;
  };
  std::vector<Node> nodes_;
};

Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);
Var operator/(Var a, Var b);
Var operator-(Var a);
Var operator+(Var a, double b);
Var operator+(double a, Var b);
Var operator-(Var a, double b);
Var operator-(double a, Var b);
Var operator*(Var a, double b);
Var operator*(double a, Var b);
Var operator/(Var a, double b);
Var operator/(double a, Var b);

Var exp(Var a);
Var log(Var a);
Var sqrt(Var a);
Var tanh(Var a);
Var sigmoid(Var a);
Var softplus(Var a);
Var square(Var a);
Var pow(Var a, double exponent);
/// max(a, 0); derivative 0 at the kink.
Var relu(Var a);

using TapeFunction = std::function<Var(Tape&, std::span<const Var>)>;

/// Gradient of the scalar function `f` at `params`.
std::vector<double> grad(const TapeFunction& f, std::span<const double> params);

/// Value and gradient in one pass.
double value_and_grad(const TapeFunction& f, std::span<const double> params, std::vector<double>& gradient);

}  // namespace mfusion
