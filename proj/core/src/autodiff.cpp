#include "mfusion/autodiff.hpp"

#include <cmath>
#include <string>

#include "mfusion/error.hpp"

namespace mfusion {

double Var::value() const { return tape_->value(*this); }

Var Tape::variable(double value) {
  nodes_.push_back({value, {0, 0}, {0.0, 0.0}, 0});
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::unary(Var a, double value, double da) {
  nodes_.push_back({value, {a.index(), 0}, {da, 0.0}, 1});
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::binary(Var a, Var b, double value, double da, double db) {
  nodes_.push_back({value, {a.index(), b.index()}, {da, db}, 2});
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

std::vector<double> Tape::gradient(Var output, std::span<const Var> wrt) const {
  for (std::size_t i = 0; i <= output.index(); ++i) {
    if (!std::isfinite(nodes_[i].value)) {
      throw NumericalError("non-finite value in forward pass at tape node " + std::to_string(i));
    }
  }
  std::vector<double> adjoint(output.index() + 1, 0.0);
  adjoint[output.index()] = 1.0;
  for (std::size_t i = output.index() + 1; i-- > 0;) {
    const Node& node = nodes_[i];
    const double a = adjoint[i];
    if (a == 0.0) continue;
    for (std::uint8_t k = 0; k < node.arity; ++k) adjoint[node.parent[k]] += a * node.partial[k];
  }
  std::vector<double> out(wrt.size(), 0.0);
  for (std::size_t i = 0; i < wrt.size(); ++i) {
    if (wrt[i].index() <= output.index()) out[i] = adjoint[wrt[i].index()];
  }
  return out;
}

namespace {
Tape& tape_of(Var a, Var b) { return *(a.tape() ? a.tape() : b.tape()); }
}  // namespace

Var operator+(Var a, Var b) { return tape_of(a, b).binary(a, b, a.value() + b.value(), 1.0, 1.0); }
Var operator-(Var a, Var b) { return tape_of(a, b).binary(a, b, a.value() - b.value(), 1.0, -1.0); }
Var operator*(Var a, Var b) {
  return tape_of(a, b).binary(a, b, a.value() * b.value(), b.value(), a.value());
}
Var operator/(Var a, Var b) {
  const double q = a.value() / b.value();
  return tape_of(a, b).binary(a, b, q, 1.0 / b.value(), -q / b.value());
}
Var operator-(Var a) { return a.tape()->unary(a, -a.value(), -1.0); }
Var operator+(Var a, double b) { return a.tape()->unary(a, a.value() + b, 1.0); }
Var operator+(double a, Var b) { return b + a; }
Var operator-(Var a, double b) { return a.tape()->unary(a, a.value() - b, 1.0); }
Var operator-(double a, Var b) { return b.tape()->unary(b, a - b.value(), -1.0); }
Var operator*(Var a, double b) { return a.tape()->unary(a, a.value() * b, b); }
Var operator*(double a, Var b) { return b * a; }
Var operator/(Var a, double b) { return a.tape()->unary(a, a.value() / b, 1.0 / b); }
Var operator/(double a, Var b) {
  const double q = a / b.value();
  return b.tape()->unary(b, q, -q / b.value());
}

Var exp(Var a) {
  const double e = std::exp(a.value());
  return a.tape()->unary(a, e, e);
}
Var log(Var a) { return a.tape()->unary(a, std::log(a.value()), 1.0 / a.value()); }
Var sqrt(Var a) {
  const double s = std::sqrt(a.value());
  return a.tape()->unary(a, s, 0.5 / s);
}
Var tanh(Var a) {
  const double t = std::tanh(a.value());
  return a.tape()->unary(a, t, 1.0 - t * t);
}
Var sigmoid(Var a) {
  const double s = 1.0 / (1.0 + std::exp(-a.value()));
  return a.tape()->unary(a, s, s * (1.0 - s));
}
Var softplus(Var a) {
  const double x = a.value();
  const double value = x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  return a.tape()->unary(a, value, 1.0 / (1.0 + std::exp(-x)));
}
Var square(Var a) { return a.tape()->unary(a, a.value() * a.value(), 2.0 * a.value()); }
Var pow(Var a, double exponent) {
  const double x = a.value();
  return a.tape()->unary(a, std::pow(x, exponent), exponent * std::pow(x, exponent - 1.0));
}
Var relu(Var a) {
  const double x = a.value();
  return a.tape()->unary(a, x > 0.0 ? x : 0.0, x > 0.0 ? 1.0 : 0.0);
}

double value_and_grad(const TapeFunction& f, std::span<const double> params, std::vector<double>& gradient) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (double p : params) vars.push_back(tape.variable(p));
  const Var out = f(tape, vars);
  gradient = tape.gradient(out, vars);
  return out.value();
}

std::vector<double> grad(const TapeFunction& f, std::span<const double> params) {
  std::vector<double> g;
  value_and_grad(f, params, g);
  return g;
}

}  // namespace mfusion
