#include "mmfuse/fatm.hpp"

namespace mmfuse {

template <typename T>
FatmResult<T> fatm_stages(const BasicTensor<T>& x, const FatmParamsT<BasicTensor<T>>& p, bool halve_lcam_gate) {
  Tape<T> tape;
  const Var in = tape.constant(x);
  const FatmStages s = fatm(tape, in, bind_params(tape, p, "fatm", false), BnMode::infer, halve_lcam_gate);
  return {tape.value(s.stem), tape.value(s.channel_gate), tape.value(s.position_gate), tape.value(s.output)};
}

template <typename T>
BasicTensor<T> fatm_forward(const BasicTensor<T>& x, const FatmParamsT<BasicTensor<T>>& p, bool halve_lcam_gate) {
  return fatm_stages(x, p, halve_lcam_gate).output;
}

template <typename T>
BasicTensor<T> fatm_forward_train(const BasicTensor<T>& x, FatmParamsT<BasicTensor<T>>& p, bool halve_lcam_gate) {
  Tape<T> tape;
  const Var in = tape.constant(x);
  BatchNormStats<T> update;
  const FatmStages s = fatm(tape, in, bind_params(tape, p, "fatm", false), BnMode::train, halve_lcam_gate, &update);
  p.cbh_bn.running_mean = std::move(update.mean);
  p.cbh_bn.running_var = std::move(update.var);
  return tape.value(s.output);
}

#define MMFUSE_INSTANTIATE_FATM(T)                                                                           \
  template FatmResult<T> fatm_stages(const BasicTensor<T>&, const FatmParamsT<BasicTensor<T>>&, bool);        \
  template BasicTensor<T> fatm_forward(const BasicTensor<T>&, const FatmParamsT<BasicTensor<T>>&, bool);      \
  template BasicTensor<T> fatm_forward_train(const BasicTensor<T>&, FatmParamsT<BasicTensor<T>>&, bool);

MMFUSE_INSTANTIATE_FATM(float)
MMFUSE_INSTANTIATE_FATM(double)

}  // namespace mmfuse
