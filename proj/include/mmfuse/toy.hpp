#pragma once

// Desk-scale training surrogate: ASFF learns to output the elementwise
// maximum of two synthetic modality tensors. Neither modality alone
// determines the target, so the fusion path has to combine both.

#include <cstdint>
#include <vector>

#include "mmfuse/config.hpp"
#include "mmfuse/io.hpp"
#include "mmfuse/params.hpp"

namespace mmfuse {

struct ToyTask {
  std::uint64_t seed = 0;
  std::size_t samples = 64;
  std::size_t channels = 8;
  std::size_t height = 8;
  std::size_t width = 8;
};

struct ToyData {
  Tensor rgb;     // (samples, C, H, W), standard normal
  Tensor ir;      // same shape, independent draws
  Tensor target;  // max(rgb, ir)
};

ToyData make_toy_data(const ToyTask& task);

struct ToyTrainResult {
  std::vector<double> losses;  // loss before each epoch's update
  double final_loss = 0;       // loss after the last update
  AsffParams params;
};

// Full-batch gradient descent on the mean squared error between
// asff_forward(rgb, ir) and the target. BN runs in inference mode so the
// running statistics stay fixed. Throws TrainingError when the loss becomes
// non-finite.
ToyTrainResult train_toy(const ToyTask& task, const ModuleConfig& config, int epochs, double learning_rate,
                         std::uint64_t seed);

}  // namespace mmfuse
