#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

#include "mmfuse/tensor.hpp"

namespace mmfuse {

// Seeded generator whose output sequence is fixed by the mt19937_64
// definition alone. The standard distributions are implementation-defined,
// so the real-valued draws are mapped here by hand.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Uniform in [0, 1) with 53 random bits.
  double unit() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * unit(); }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = unit();
    while (u1 <= 0.0) u1 = unit();
    const double u2 = unit();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * std::numbers::pi * u2);
  }

  std::uint64_t next() { return engine_(); }

  template <typename T>
  BasicTensor<T> uniform_tensor(Shape s, double lo, double hi) {
    BasicTensor<T> t(s);
    for (auto& v : t.data()) v = static_cast<T>(uniform(lo, hi));
    return t;
  }

  template <typename T>
  BasicTensor<T> normal_tensor(Shape s, double stddev = 1.0) {
    BasicTensor<T> t(s);
    for (auto& v : t.data()) v = static_cast<T>(stddev * normal());
    return t;
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0;
  bool has_spare_ = false;
};

}  // namespace mmfuse
