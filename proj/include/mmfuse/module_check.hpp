#pragma once

// Finite-difference checks of whole modules and of individual tape
// primitives, in double precision, on seeded random data.

#include <cstdint>
#include <string>
#include <vector>

#include "mmfuse/config.hpp"
#include "mmfuse/gradcheck.hpp"

namespace mmfuse {

// Names accepted by check_module_gradients: the two modules, their
// sub-blocks, and train-mode variants of the modules containing BN.
const std::vector<std::string>& checkable_modules();

// Checks the gradient of a random projection of the module output with
// respect to the inputs and every learnable parameter. Parameters are drawn
// away from their defaults so that BN affine terms, alpha and beta are
// exercised. Throws ConfigError for an unknown name.
GradCheckReport check_module_gradients(const std::string& module, const ModuleConfig& config, std::uint64_t seed,
                                       double tolerance = kGradTolerance, double step = kFiniteDiffStep);

const std::vector<std::string>& checkable_primitives();

// Inputs are drawn so that no element sits within finite-difference reach
// of a kink (ReLU/hardswish breakpoints, max-pool ties).
GradCheckReport check_primitive_gradients(const std::string& primitive, std::uint64_t seed,
                                          double tolerance = kGradTolerance, double step = kFiniteDiffStep);

}  // namespace mmfuse
