#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mmfuse/tape.hpp"
#include "mmfuse/tensor.hpp"

namespace mmfuse {

inline constexpr double kFiniteDiffStep = 1e-3;
inline constexpr double kGradTolerance = 1e-3;
// Elements where both the analytic and the numeric gradient are below this
// magnitude are left out of the relative error.
inline constexpr double kGradNegligible = 1e-6;

// Central differences (f(x+h e_i) - f(x-h e_i)) / 2h, all in double.
TensorD finite_diff_grad(const std::function<double(const TensorD&)>& f, const TensorD& at,
                         double h = kFiniteDiffStep);

// Tensor-valued f, contracted with `seed` so the estimate is d<seed, f(x)>/dx.
TensorD finite_diff_grad(const std::function<TensorD(const TensorD&)>& f, const TensorD& at, const TensorD& seed,
                         double h = kFiniteDiffStep);

// max_i |a_i - b_i| / max_i max(|a_i|, |b_i|), restricted to elements where
// at least one of the two exceeds `negligible` and that are not flagged in
// `excluded`. Returns 0 when no element qualifies.
double relative_max_norm_error(const TensorD& analytic, const TensorD& numeric,
                               double negligible = kGradNegligible, const std::vector<bool>* excluded = nullptr);

// A differentiable leaf owned by the caller. check_gradients perturbs *value
// in place and restores it.
struct LeafRef {
  std::string name;
  TensorD* value;
};

struct LeafReport {
  std::string name;
  double relative_error = 0;
  bool passed = true;
  std::size_t elements = 0;
  std::size_t straddling = 0;  // elements whose +-h samples crossed a kink
};

struct GradCheckReport {
  std::vector<LeafReport> leaves;
  double worst = 0;
  bool passed = true;
  std::size_t elements = 0;
  std::size_t straddling = 0;

  double straddling_fraction() const {
    return elements == 0 ? 0.0 : static_cast<double>(straddling) / static_cast<double>(elements);
  }
};

// `build` records the computation on a fresh tape, registering every leaf
// with tape.input(leaf.name, *leaf.value), and returns the output. The
// analytic gradient of <seed, output> is compared leaf by leaf against
// central differences. A central difference is only an estimate of the
// derivative when both samples lie on the same smooth piece as the base
// point; elements whose samples change the tape's branch signature are
// counted as straddling and left out of the comparison.
GradCheckReport check_gradients(const std::function<Var(Tape<double>&)>& build, const std::vector<LeafRef>& leaves,
                                const TensorD& seed, double step = kFiniteDiffStep,
                                double tolerance = kGradTolerance);

}  // namespace mmfuse
