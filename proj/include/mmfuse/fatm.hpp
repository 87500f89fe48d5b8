#pragma once

// Feature attention transformation: a conv-BN-hardswish stem followed by
// channel gating (LCAM) and positional gating (LPAM).
//
//   F_h  = hardswish(BN(conv3x3(P)))
//   F_LC = F_h  * LCAM(F_h)     gate (N,C,1,1) in (0,2)
//   F_LP = F_LC * LPAM(F_LC)    gate (N,1,H,W) in (0,1)

#include "mmfuse/attention.hpp"
#include "mmfuse/params.hpp"
#include "mmfuse/tape.hpp"

namespace mmfuse {

struct FatmStages {
  Var stem;           // F_h
  Var channel_gate;   // LCAM(F_h)
  Var channel_gated;  // F_LC
  Var position_gate;  // LPAM(F_LC)
  Var output;         // F_LP
};

template <typename T>
FatmStages fatm(Tape<T>& tape, Var x, const FatmParamsT<Var>& p, BnMode mode = BnMode::infer,
                bool halve_lcam_gate = false, BatchNormStats<T>* bn_update = nullptr) {
  const std::size_t C = tape.shape(x).c;
  FatmStages s{};
  const Var conv = tape.conv2d(x, ConvSpec::square(C, C, 3, false), p.cbh_conv.weight, std::nullopt);
  s.stem = tape.activation(tape.batch_norm(conv, p.cbh_bn.gamma, p.cbh_bn.beta, p.cbh_bn.running_mean,
                                           p.cbh_bn.running_var, mode, bn_update),
                           ActivationKind::hardswish);
  s.channel_gate = lcam_gate(tape, s.stem, p.lcam, halve_lcam_gate);
  s.channel_gated = tape.mul(s.stem, s.channel_gate);
  s.position_gate = lpam_gate(tape, s.channel_gated, p.lpam);
  s.output = tape.mul(s.channel_gated, s.position_gate);
  return s;
}

template <typename T>
struct FatmResult {
  BasicTensor<T> stem;
  BasicTensor<T> channel_gate;
  BasicTensor<T> position_gate;
  BasicTensor<T> output;
};

// Inference-mode forward; pure.
template <typename T>
FatmResult<T> fatm_stages(const BasicTensor<T>& x, const FatmParamsT<BasicTensor<T>>& p, bool halve_lcam_gate = false);

template <typename T>
BasicTensor<T> fatm_forward(const BasicTensor<T>& x, const FatmParamsT<BasicTensor<T>>& p,
                            bool halve_lcam_gate = false);

// Train-mode forward: BN uses batch statistics and the stem's running
// statistics in `p` are updated in place.
template <typename T>
BasicTensor<T> fatm_forward_train(const BasicTensor<T>& x, FatmParamsT<BasicTensor<T>>& p,
                                  bool halve_lcam_gate = false);

}  // namespace mmfuse
