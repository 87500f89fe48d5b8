#pragma once

// Helpers shared by the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <string>

#include "mmfuse/params.hpp"
#include "mmfuse/rng.hpp"
#include "mmfuse/tensor.hpp"

namespace testing_support {

template <typename A, typename B>
double relative_error(const mmfuse::BasicTensor<A>& a, const mmfuse::BasicTensor<B>& b) {
  double diff = 0, scale = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double x = static_cast<double>(a[i]), y = static_cast<double>(b[i]);
    diff = std::max(diff, std::abs(x - y));
    scale = std::max({scale, std::abs(x), std::abs(y)});
  }
  return scale == 0 ? diff : diff / scale;
}

template <typename T>
bool same_values(const mmfuse::BasicTensor<T>& a, const mmfuse::BasicTensor<T>& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

// Moves BN affine terms, running statistics, alpha and beta off their
// defaults so every parameter influences the output.
template <typename G>
void randomize_affine(G& params, mmfuse::Rng& rng) {
  using mmfuse::ParamKind;
  mmfuse::visit_params(params, [&](const std::string&, auto& t, ParamKind kind) {
    using Scalar = std::remove_cvref_t<decltype(t[0])>;
    const auto fill = [&](double lo, double hi) { t = rng.uniform_tensor<Scalar>(t.shape(), lo, hi); };
    switch (kind) {
      case ParamKind::bn_gamma:
      case ParamKind::alpha:
        fill(0.5, 1.5);
        break;
      case ParamKind::bn_beta:
      case ParamKind::beta:
        fill(-0.5, 0.5);
        break;
      case ParamKind::running_mean:
        fill(-0.2, 0.2);
        break;
      case ParamKind::running_var:
        fill(0.5, 1.5);
        break;
      default:
        break;
    }
  });
}

template <template <typename> class G>
G<mmfuse::TensorD> random_double_params(const G<mmfuse::Tensor>& base, std::uint64_t seed) {
  auto p = mmfuse::cast_params<G, double>(base);
  mmfuse::Rng rng(seed ^ 0x9e3779b97f4a7c15ull);
  randomize_affine(p, rng);
  return p;
}

}  // namespace testing_support
