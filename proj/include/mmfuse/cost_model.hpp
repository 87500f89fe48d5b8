#pragma once

// Analytic parameter and multiply-accumulate accounting for ASFF and FATM.
//
// Counting rules:
//   conv params  = out * (in/groups) * kh * kw (+ out when biased)
//   conv MACs    = output positions * out * (in/groups) * kh * kw
//   batch norm   = 2C learnable (gamma, beta); 2C running statistics are
//                  reported as buffers, not parameters
//   pooling      = one non-MAC op per input element
//   activation, elementwise, normalisation = one non-MAC op per output element
//   upsample, split, concat, shuffle, reshape = free
// GFLOPs = 2 * MACs / 1e9; non-MAC ops are reported but not included.
//
// The layer table is derived from the configuration alone. It deliberately
// does not look at allocated weights, so it can be checked against them.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mmfuse/config.hpp"
#include "mmfuse/tensor.hpp"

namespace mmfuse {

struct TensorSpec {
  std::string name;
  Shape shape;
  bool learnable = true;
};

struct LayerCost {
  std::string name;
  std::string kind;
  std::uint64_t params = 0;
  std::uint64_t buffers = 0;
  std::uint64_t macs = 0;
  std::uint64_t other_ops = 0;
  std::vector<TensorSpec> tensors;
};

struct CostReport {
  std::string module;
  ModuleConfig config;
  std::vector<LayerCost> layers;
  std::uint64_t total_params = 0;
  std::uint64_t total_buffers = 0;
  std::uint64_t total_macs = 0;
  std::uint64_t total_other_ops = 0;

  double gflops() const { return 2.0 * static_cast<double>(total_macs) / 1e9; }
  double params_millions() const { return static_cast<double>(total_params) / 1e6; }
};

CostReport cost_report(const ModuleConfig& config, ModuleKind which);

// Both return the full report; the names follow the question being asked.
inline CostReport count_params(const ModuleConfig& config, ModuleKind which) { return cost_report(config, which); }
inline CostReport count_flops(const ModuleConfig& config, ModuleKind which) { return cost_report(config, which); }

// Every tensor the module allocates, in archive order.
std::vector<TensorSpec> weight_manifest(const ModuleConfig& config, ModuleKind which);

std::uint64_t conv_param_count(std::uint64_t in, std::uint64_t out, std::uint64_t kh, std::uint64_t kw,
                               std::uint64_t groups, bool bias);
std::uint64_t conv_mac_count(std::uint64_t out_positions, std::uint64_t in, std::uint64_t out, std::uint64_t kh,
                             std::uint64_t kw, std::uint64_t groups);

struct FusionComparison {
  CostReport single;  // one fusion unit at the given scale
  CostReport multi;   // one unit per pyramid scale
};

// One ASFF unit against `n_fusion_units` units placed on successive pyramid
// scales, each halving H and W (rounded up) and doubling C.
FusionComparison compare_fusion_baselines(const ModuleConfig& config, std::size_t n_fusion_units);

}  // namespace mmfuse
