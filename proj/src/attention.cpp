#include "mmfuse/attention.hpp"

namespace mmfuse {

template <typename T>
BasicTensor<T> cam_forward(const BasicTensor<T>& x, const CamParamsT<BasicTensor<T>>& p) {
  Tape<T> tape;
  const Var in = tape.constant(x);
  return tape.value(cam(tape, in, bind_params(tape, p, "cam", false)));
}

template <typename T>
BasicTensor<T> pam_forward(const BasicTensor<T>& x, const PamParamsT<BasicTensor<T>>& p) {
  Tape<T> tape;
  const Var in = tape.constant(x);
  return tape.value(pam(tape, in, bind_params(tape, p, "pam", false)));
}

template <typename T>
BasicTensor<T> lcam_forward(const BasicTensor<T>& x, const LcamParamsT<BasicTensor<T>>& p, bool halve) {
  Tape<T> tape;
  const Var in = tape.constant(x);
  return tape.value(lcam_gate(tape, in, bind_params(tape, p, "lcam", false), halve));
}

template <typename T>
BasicTensor<T> lpam_forward(const BasicTensor<T>& x, const LpamParamsT<BasicTensor<T>>& p) {
  Tape<T> tape;
  const Var in = tape.constant(x);
  return tape.value(lpam_gate(tape, in, bind_params(tape, p, "lpam", false)));
}

template <typename T>
BasicTensor<T> cam_gate_values(const BasicTensor<T>& x, const CamParamsT<BasicTensor<T>>& p) {
  Tape<T> tape;
  const Var in = tape.constant(x);
  return tape.value(cam_gate(tape, in, bind_params(tape, p, "cam", false)));
}

template <typename T>
std::pair<BasicTensor<T>, BasicTensor<T>> pam_gate_values(const BasicTensor<T>& x,
                                                          const PamParamsT<BasicTensor<T>>& p) {
  Tape<T> tape;
  const Var in = tape.constant(x);
  const PamGates g = pam_gates(tape, in, bind_params(tape, p, "pam", false));
  return {tape.value(g.horizontal), tape.value(g.vertical)};
}

#define MMFUSE_INSTANTIATE_ATTENTION(T)                                                                       \
  template BasicTensor<T> cam_forward(const BasicTensor<T>&, const CamParamsT<BasicTensor<T>>&);              \
  template BasicTensor<T> pam_forward(const BasicTensor<T>&, const PamParamsT<BasicTensor<T>>&);              \
  template BasicTensor<T> lcam_forward(const BasicTensor<T>&, const LcamParamsT<BasicTensor<T>>&, bool);      \
  template BasicTensor<T> lpam_forward(const BasicTensor<T>&, const LpamParamsT<BasicTensor<T>>&);            \
  template BasicTensor<T> cam_gate_values(const BasicTensor<T>&, const CamParamsT<BasicTensor<T>>&);          \
  template std::pair<BasicTensor<T>, BasicTensor<T>> pam_gate_values(const BasicTensor<T>&,                  \
                                                                     const PamParamsT<BasicTensor<T>>&);

MMFUSE_INSTANTIATE_ATTENTION(float)
MMFUSE_INSTANTIATE_ATTENTION(double)

}  // namespace mmfuse
