#include "mmfuse/toy.hpp"

#include <cmath>

#include "mmfuse/asff.hpp"
#include "mmfuse/rng.hpp"

namespace mmfuse {

ToyData make_toy_data(const ToyTask& task) {
  const Shape s{task.samples, task.channels, task.height, task.width};
  Rng rng(task.seed);
  ToyData d{rng.normal_tensor<float>(s), rng.normal_tensor<float>(s), Tensor(s)};
  for (std::size_t i = 0; i < s.numel(); ++i) d.target[i] = std::max(d.rgb[i], d.ir[i]);
  return d;
}

namespace {

struct LossAndGrads {
  double loss;
  GradientMap<float> grads;
};

LossAndGrads evaluate(const ToyData& data, const AsffParams& params, std::size_t groups, bool with_grads) {
  Tape<float> tape;
  const Var rgb = tape.constant(data.rgb);
  const Var ir = tape.constant(data.ir);
  const auto bound = bind_params(tape, params, "", with_grads);
  const AsffStages s = asff(tape, rgb, ir, bound, groups, BnMode::infer);
  const Var diff = tape.sub(s.shuffled, tape.constant(data.target));
  const Var loss = tape.mean(tape.mul(diff, diff));
  LossAndGrads out{static_cast<double>(tape.value(loss)[0]), {}};
  if (with_grads) out.grads = tape.backward(loss, Tensor(Shape{}, 1.0f));
  return out;
}

}  // namespace

ToyTrainResult train_toy(const ToyTask& task, const ModuleConfig& config, int epochs, double learning_rate,
                         std::uint64_t seed) {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  ModuleConfig cfg = config;
  cfg.channels = task.channels;
  cfg.height = task.height;
  cfg.width = task.width;
  cfg.batch = task.samples;
  const ToyData data = make_toy_data(task);
  ToyTrainResult result{{}, 0, init_asff_params(cfg, seed)};
  const auto lr = static_cast<float>(learning_rate);

  for (int epoch = 0; epoch < epochs; ++epoch) {
    const LossAndGrads step = evaluate(data, result.params, cfg.groups, true);
    if (!std::isfinite(step.loss)) {
      throw TrainingError("toy training diverged at epoch " + std::to_string(epoch), epoch);
    }
    result.losses.push_back(step.loss);
    visit_params(result.params, [&](const std::string& name, Tensor& t, ParamKind kind) {
      if (!is_learnable(kind)) return;
      const Tensor& g = step.grads.at(name);
      for (std::size_t i = 0; i < t.numel(); ++i) t[i] -= lr * g[i];
    });
  }
  result.final_loss = evaluate(data, result.params, cfg.groups, false).loss;
  if (!std::isfinite(result.final_loss)) {
    throw TrainingError("toy training diverged after epoch " + std::to_string(epochs - 1), epochs - 1);
  }
  return result;
}

}  // namespace mmfuse
