#include "mmfuse/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace mmfuse {

TensorD finite_diff_grad(const std::function<double(const TensorD&)>& f, const TensorD& at, double h) {
  TensorD grad(at.shape());
  TensorD x = at;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double up = f(x);
    x[i] = orig - h;
    const double down = f(x);
    x[i] = orig;
    grad[i] = (up - down) / (2 * h);
  }
  return grad;
}

TensorD finite_diff_grad(const std::function<TensorD(const TensorD&)>& f, const TensorD& at, const TensorD& seed,
                         double h) {
  return finite_diff_grad(
      [&](const TensorD& x) {
        const TensorD y = f(x);
        if (y.shape() != seed.shape()) {
          throw ShapeError("seed shape " + to_string(seed.shape()) + " does not match f output " +
                           to_string(y.shape()));
        }
        double s = 0;
        for (std::size_t i = 0; i < y.numel(); ++i) s += seed[i] * y[i];
        return s;
      },
      at, h);
}

double relative_max_norm_error(const TensorD& analytic, const TensorD& numeric, double negligible,
                               const std::vector<bool>* excluded) {
  if (analytic.shape() != numeric.shape()) {
    throw ShapeError("gradient shapes differ: " + to_string(analytic.shape()) + " vs " + to_string(numeric.shape()));
  }
  double diff = 0, scale = 0;
  for (std::size_t i = 0; i < analytic.numel(); ++i) {
    const double a = std::abs(analytic[i]), b = std::abs(numeric[i]);
    if (a < negligible && b < negligible) continue;
    if (excluded && (*excluded)[i]) continue;
    diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
    scale = std::max({scale, a, b});
  }
  return scale == 0 ? 0.0 : diff / scale;
}

GradCheckReport check_gradients(const std::function<Var(Tape<double>&)>& build, const std::vector<LeafRef>& leaves,
                                const TensorD& seed, double step, double tolerance) {
  GradientMap<double> analytic;
  {
    Tape<double> tape;
    const Var out = build(tape);
    analytic = tape.backward(out, seed);
  }
  std::vector<std::int64_t> base_signature;
  {
    Tape<double> tape;
    build(tape);
    base_signature = tape.branch_signature();
  }
  // Projected output, and whether the evaluation left the base point's piece.
  const auto evaluate = [&]() {
    Tape<double> tape;
    const Var out = build(tape);
    const TensorD& y = tape.value(out);
    double s = 0;
    for (std::size_t i = 0; i < y.numel(); ++i) s += seed[i] * y[i];
    return std::pair{s, tape.branch_signature() != base_signature};
  };

  GradCheckReport report;
  for (const auto& leaf : leaves) {
    const auto it = analytic.find(leaf.name);
    if (it == analytic.end()) throw InternalError("leaf '" + leaf.name + "' was not registered on the tape");
    TensorD numeric(leaf.value->shape());
    TensorD& x = *leaf.value;
    std::vector<bool> straddling(x.numel(), false);
    for (std::size_t i = 0; i < x.numel(); ++i) {
      const double orig = x[i];
      x[i] = orig + step;
      const auto [up, up_crossed] = evaluate();
      x[i] = orig - step;
      const auto [down, down_crossed] = evaluate();
      x[i] = orig;
      numeric[i] = (up - down) / (2 * step);
      straddling[i] = up_crossed || down_crossed;
    }
    LeafReport lr{leaf.name, relative_max_norm_error(it->second, numeric, kGradNegligible, &straddling), true,
                  x.numel(), static_cast<std::size_t>(std::count(straddling.begin(), straddling.end(), true))};
    lr.passed = lr.relative_error <= tolerance;
    report.elements += lr.elements;
    report.straddling += lr.straddling;
    report.worst = std::max(report.worst, lr.relative_error);
    report.passed = report.passed && lr.passed;
    report.leaves.push_back(std::move(lr));
  }
  return report;
}

}  // namespace mmfuse
