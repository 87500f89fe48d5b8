#pragma once

// Channel and positional attention operators used by ASFF (CAM, PAM) and by
// FATM (LCAM, LPAM). The tape-level functions record onto a Tape so they
// compose into larger differentiable modules; the *_forward functions are
// plain tensor-in, tensor-out conveniences.

#include "mmfuse/params.hpp"
#include "mmfuse/tape.hpp"

namespace mmfuse {

// CAM gate: sigmoid(conv1d(avgpool(x))) as (N,C,1,1). The 1-D kernel runs
// across the channel axis with same padding.
template <typename T>
Var cam_gate(Tape<T>& tape, Var x, const CamParamsT<Var>& p) {
  const Shape s = tape.shape(x);
  const std::size_t k = tape.shape(p.conv.weight).h;
  const Var pooled = tape.adaptive_pool(x, 1, 1, PoolMode::avg);
  const Var descriptor = tape.reshape(pooled, Shape{s.n, 1, s.c, 1});
  const Var mixed = tape.conv1d(descriptor, k, p.conv.weight, p.conv.bias);
  return tape.activation(tape.reshape(mixed, Shape{s.n, s.c, 1, 1}), ActivationKind::sigmoid);
}

template <typename T>
Var cam(Tape<T>& tape, Var x, const CamParamsT<Var>& p) {
  return tape.mul(x, cam_gate(tape, x, p));
}

struct PamGates {
  Var horizontal;  // (N,C,H,1), from the width-averaged strip
  Var vertical;    // (N,C,1,W), from the height-averaged strip
};

template <typename T>
PamGates pam_gates(Tape<T>& tape, Var x, const PamParamsT<Var>& p) {
  const Shape s = tape.shape(x);
  const ConvSpec mix = ConvSpec::pointwise(s.c, s.c);
  const Var strip_h = tape.adaptive_pool(x, s.h, 1, PoolMode::avg);
  const Var strip_v = tape.adaptive_pool(x, 1, s.w, PoolMode::avg);
  return {
      tape.activation(tape.conv2d(strip_h, mix, p.horizontal.weight, p.horizontal.bias), ActivationKind::sigmoid),
      tape.activation(tape.conv2d(strip_v, mix, p.vertical.weight, p.vertical.bias), ActivationKind::sigmoid),
  };
}

template <typename T>
Var pam(Tape<T>& tape, Var x, const PamParamsT<Var>& p) {
  const PamGates g = pam_gates(tape, x, p);
  return tape.mul(tape.mul(x, g.horizontal), g.vertical);
}

// LCAM gate (N,C,1,1): sigmoid(bottleneck(avgpool)) + sigmoid(bottleneck(maxpool)),
// so each element lies in (0,2). With `halve` the sum is scaled by 1/2.
template <typename T>
Var lcam_gate(Tape<T>& tape, Var x, const LcamParamsT<Var>& p, bool halve = false) {
  const Shape s = tape.shape(x);
  const std::size_t mid = tape.shape(p.reduce.weight).n;
  if (mid == 0 || s.c % mid != 0 || tape.shape(p.reduce.weight).c != s.c) {
    throw ConfigError("LCAM bottleneck " + std::to_string(mid) + " does not fit " + std::to_string(s.c) +
                      " channels");
  }
  const ConvSpec down = ConvSpec::pointwise(s.c, mid);
  const ConvSpec up = ConvSpec::pointwise(mid, s.c);
  const auto branch = [&](Var pooled) {
    const Var hidden = tape.activation(tape.conv2d(pooled, down, p.reduce.weight, p.reduce.bias), ActivationKind::relu);
    return tape.activation(tape.conv2d(hidden, up, p.expand.weight, p.expand.bias), ActivationKind::sigmoid);
  };
  Var gate = tape.add(branch(tape.adaptive_pool(x, 1, 1, PoolMode::avg)),
                      branch(tape.adaptive_pool(x, 1, 1, PoolMode::max)));
  if (halve) gate = tape.mul(gate, tape.constant(BasicTensor<T>(Shape{}, T(0.5))));
  return gate;
}

// LPAM gate (N,1,H,W): sigmoid(conv3x3([channel max, channel mean])).
template <typename T>
Var lpam_gate(Tape<T>& tape, Var x, const LpamParamsT<Var>& p) {
  const Var pooled =
      tape.channel_concat({tape.channel_pool(x, PoolMode::max), tape.channel_pool(x, PoolMode::avg)});
  return tape.activation(tape.conv2d(pooled, ConvSpec::square(2, 1, 3), p.conv.weight, p.conv.bias),
                         ActivationKind::sigmoid);
}

template <typename T>
BasicTensor<T> cam_forward(const BasicTensor<T>& x, const CamParamsT<BasicTensor<T>>& p);
template <typename T>
BasicTensor<T> pam_forward(const BasicTensor<T>& x, const PamParamsT<BasicTensor<T>>& p);
template <typename T>
BasicTensor<T> lcam_forward(const BasicTensor<T>& x, const LcamParamsT<BasicTensor<T>>& p, bool halve = false);
template <typename T>
BasicTensor<T> lpam_forward(const BasicTensor<T>& x, const LpamParamsT<BasicTensor<T>>& p);

template <typename T>
BasicTensor<T> cam_gate_values(const BasicTensor<T>& x, const CamParamsT<BasicTensor<T>>& p);
template <typename T>
std::pair<BasicTensor<T>, BasicTensor<T>> pam_gate_values(const BasicTensor<T>& x,
                                                          const PamParamsT<BasicTensor<T>>& p);

}  // namespace mmfuse
