// Central finite-difference check of tape gradients.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "dine/autodiff.hpp"

namespace dine {

/// Relative error used by the checks: |a - n| / max(|a|, |n|, floor).
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Fourth-order central difference: (f(-2h) - 8 f(-h) + 8 f(h) - f(2h)) / 12h.
template <class F>
double central_difference(F&& at, double orig, double h) {
  return (at(orig - 2.0 * h) - 8.0 * at(orig - h) + 8.0 * at(orig + h) - at(orig + 2.0 * h)) / (12.0 * h);
}

/// Checks d f / d theta for a scalar function written against the tape.
/// Returns the maximum coordinate-wise relative error.
inline double grad_check(const std::function<Var(Tape&, Var)>& f, const Tensor& theta, double h = 1e-5) {
  Parameter p("theta", theta, ParamGroup::kNew);
  p.zero_grad();
  {
    Tape tape;
    Var loss = f(tape, tape.watch(p));
    tape.backward(loss);
  }
  auto eval = [&](const Tensor& at) {
    Tape tape(false);
    return f(tape, tape.constant(at)).scalar();
  };
  double worst = 0.0;
  Tensor probe = theta;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double orig = probe[i];
    const double numeric = central_difference(
        [&](double v) {
          probe[i] = v;
          return eval(probe);
        },
        orig, h);
    probe[i] = orig;
    worst = std::max(worst, relative_error(p.grad[i], numeric));
  }
  return worst;
}

/// Same check over a set of parameters that `loss` watches itself.
/// `loss` must be a pure function of the parameter values.
inline double grad_check(const std::function<Var(Tape&)>& loss, std::span<Parameter* const> params,
                         double h = 1e-5) {
  for (Parameter* p : params) p->zero_grad();
  {
    Tape tape;
    tape.backward(loss(tape));
  }
  std::vector<Tensor> analytic;
  for (Parameter* p : params) analytic.push_back(p->grad);
  auto eval = [&] {
    Tape tape;
    return loss(tape).scalar();
  };
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& v = params[k]->value;
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double orig = v[i];
      const double numeric = central_difference(
          [&](double x) {
            v[i] = x;
            return eval();
          },
          orig, h);
      v[i] = orig;
      worst = std::max(worst, relative_error(analytic[k][i], numeric));
    }
  }
  return worst;
}

}  // namespace dine
