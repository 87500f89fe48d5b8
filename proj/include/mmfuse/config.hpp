#pragma once

#include <cstddef>
#include <string>

#include "mmfuse/tensor.hpp"

namespace mmfuse {

enum class ModuleKind { asff, fatm };

const char* module_name(ModuleKind kind);
// Accepts "asff" or "fatm"; throws ConfigError otherwise.
ModuleKind parse_module_kind(const std::string& name);

// Structural hyperparameters of one fusion module instance, plus the input
// extents used for cost accounting.
struct ModuleConfig {
  std::size_t batch = 1;
  std::size_t channels = 64;
  std::size_t height = 20;
  std::size_t width = 20;
  std::size_t groups = 4;         // channel shuffle groups
  std::size_t lcam_ratio = 16;    // LCAM bottleneck reduction
  std::size_t cam_kernel = 3;     // CAM 1-D kernel taps
  bool halve_lcam_gate = false;   // scale the summed LCAM gate into (0,1)

  Shape input_shape() const { return {batch, channels, height, width}; }

  // Throws ConfigError when the hyperparameters are inconsistent for `kind`.
  void validate(ModuleKind kind) const;
};

}  // namespace mmfuse
