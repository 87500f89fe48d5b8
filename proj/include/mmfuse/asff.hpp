#pragma once

// Attention-guided self-modulation feature fusion. Three stages turn a pair
// of same-shaped RGB/IR feature maps into one fused map:
//
//   1. attention fusion   F_a = PAM(DWConv(P_rgb + CAM(P_rgb)) + DWConv(P_ir + CAM(P_ir)))
//   2. modulation block   F_dr = DFM(F_a) + F_a,  F_b = FM(F_dr) + F_dr
//   3. channel shuffle    F_c = shuffle(F_b, G)
//
// Batch norm only appears inside FM's local encoder.

#include "mmfuse/attention.hpp"
#include "mmfuse/params.hpp"
#include "mmfuse/tape.hpp"

namespace mmfuse {

void check_modalities(const Shape& rgb, const Shape& ir);

template <typename T>
Var attention_fusion(Tape<T>& tape, Var rgb, Var ir, const AsffParamsT<Var>& p) {
  check_modalities(tape.shape(rgb), tape.shape(ir));
  const std::size_t C = tape.shape(rgb).c;
  const ConvSpec dw = ConvSpec::depthwise3x3(C);
  const auto enhance = [&](Var x, const CamParamsT<Var>& cam_p, const Conv<Var>& dw_p) {
    return tape.conv2d(tape.add(x, cam(tape, x, cam_p)), dw, dw_p.weight, dw_p.bias);
  };
  const Var m_rgb = enhance(rgb, p.rgb_cam, p.rgb_dw);
  const Var m_ir = enhance(ir, p.ir_cam, p.ir_dw);
  return pam(tape, tape.add(m_rgb, m_ir), p.pam);
}

// Dynamic feature modulation: global variance-modulated branch plus local
// bottleneck branch. Requires even H and W (the global branch runs at half
// resolution and is upsampled by 2).
template <typename T>
Var dfm(Tape<T>& tape, Var f_a, const DfmParamsT<Var>& p) {
  const Shape s = tape.shape(f_a);
  if (s.h < 2 || s.w < 2 || s.h % 2 != 0 || s.w % 2 != 0) {
    throw ShapeError("DFM needs even spatial extents >= 2, got " + to_string(s));
  }
  const std::size_t C = s.c;
  const Var expanded = tape.conv2d(tape.l2_normalize_channels(f_a), ConvSpec::pointwise(C, 2 * C), p.entry.weight,
                                   p.entry.bias);
  const auto xy = tape.channel_split(expanded, {C, C});
  const Var x = xy[0], y = xy[1];

  const Var pooled = tape.adaptive_pool(x, s.h / 2, s.w / 2, PoolMode::max);
  const Var x_s = tape.conv2d(pooled, ConvSpec::depthwise3x3(C), p.global_dw.weight, p.global_dw.bias);
  const Var variance = tape.channel_variance(x);
  const Var modulated = tape.add(tape.mul(x_s, p.modulation.alpha), tape.mul(variance, p.modulation.beta));
  const Var x_m = tape.conv2d(modulated, ConvSpec::pointwise(C, C), p.global_mix.weight, p.global_mix.bias);
  const Var x_g = tape.mul(x, tape.upsample_nearest(tape.activation(x_m, ActivationKind::gelu), 2));

  const Var y_dw = tape.conv2d(y, ConvSpec::depthwise3x3(C), p.local_dw.weight, p.local_dw.bias);
  const Var y_h = tape.conv2d(y_dw, ConvSpec::pointwise(C, 2 * C), p.local_expand.weight, p.local_expand.bias);
  const Var y_l = tape.conv2d(tape.activation(y_h, ActivationKind::gelu), ConvSpec::pointwise(2 * C, C),
                              p.local_reduce.weight, p.local_reduce.bias);

  return tape.conv2d(tape.add(x_g, y_l), ConvSpec::pointwise(C, C), p.exit.weight, p.exit.bias);
}

// Running-statistic updates produced by FM in train mode.
template <typename T>
struct FmBnUpdates {
  BatchNormStats<T> cbs1;
  BatchNormStats<T> dw;
  BatchNormStats<T> cbs2;
};

// Feature mapping: expand to 2C, split C/2 | 3C/2, locally encode the
// narrow part with CBS -> DWConv -> BN -> CBS, re-join and merge back to C.
template <typename T>
Var fm(Tape<T>& tape, Var f_dr, const FmParamsT<Var>& p, BnMode mode = BnMode::infer,
       FmBnUpdates<T>* updates = nullptr) {
  const std::size_t C = tape.shape(f_dr).c;
  if (C % 2 != 0) throw ConfigError("FM needs an even channel count, got " + std::to_string(C));
  const std::size_t half = C / 2;
  const auto bn = [&](Var v, const BatchNorm<Var>& b, BatchNormStats<T>* upd) {
    return tape.batch_norm(v, b.gamma, b.beta, b.running_mean, b.running_var, mode, upd);
  };
  const Var expanded = tape.activation(
      tape.conv2d(tape.l2_normalize_channels(f_dr), ConvSpec::pointwise(C, 2 * C), p.expand.weight, p.expand.bias),
      ActivationKind::gelu);
  const auto parts = tape.channel_split(expanded, {half, 3 * half});

  const Var w1 = tape.activation(
      bn(tape.conv2d(parts[0], ConvSpec::pointwise(half, half, false), p.cbs1_conv.weight, std::nullopt), p.cbs1_bn,
         updates ? &updates->cbs1 : nullptr),
      ActivationKind::silu);
  const Var w2 = bn(tape.conv2d(w1, ConvSpec::depthwise3x3(half, false), p.dw.weight, std::nullopt), p.dw_bn,
                    updates ? &updates->dw : nullptr);
  const Var w3 = tape.activation(
      bn(tape.conv2d(w2, ConvSpec::pointwise(half, half, false), p.cbs2_conv.weight, std::nullopt), p.cbs2_bn,
         updates ? &updates->cbs2 : nullptr),
      ActivationKind::silu);

  const Var joined = tape.channel_concat({tape.activation(w3, ActivationKind::gelu), parts[1]});
  return tape.conv2d(joined, ConvSpec::pointwise(2 * C, C), p.merge.weight, p.merge.bias);
}

template <typename T>
Var fmb(Tape<T>& tape, Var f_a, const DfmParamsT<Var>& dfm_p, const FmParamsT<Var>& fm_p,
        BnMode mode = BnMode::infer) {
  const Var f_dr = tape.add(dfm(tape, f_a, dfm_p), f_a);
  return tape.add(fm(tape, f_dr, fm_p, mode), f_dr);
}

struct AsffStages {
  Var attention;   // F_a
  Var modulation;  // F_b
  Var shuffled;    // F_c
};

template <typename T>
AsffStages asff(Tape<T>& tape, Var rgb, Var ir, const AsffParamsT<Var>& p, std::size_t groups,
                BnMode mode = BnMode::infer) {
  const std::size_t C = tape.shape(rgb).c;
  if (C % 2 != 0) throw ConfigError("ASFF needs an even channel count, got " + std::to_string(C));
  shuffle_permutation(C, groups);
  AsffStages out{};
  out.attention = attention_fusion(tape, rgb, ir, p);
  out.modulation = fmb(tape, out.attention, p.dfm, p.fm, mode);
  out.shuffled = tape.channel_shuffle(out.modulation, groups);
  return out;
}

template <typename T>
struct AsffResult {
  BasicTensor<T> attention;
  BasicTensor<T> modulation;
  BasicTensor<T> fused;
};

template <typename T>
BasicTensor<T> attention_fusion_forward(const BasicTensor<T>& rgb, const BasicTensor<T>& ir,
                                        const AsffParamsT<BasicTensor<T>>& p);
template <typename T>
BasicTensor<T> dfm_forward(const BasicTensor<T>& f_a, const DfmParamsT<BasicTensor<T>>& p);
template <typename T>
BasicTensor<T> fm_forward(const BasicTensor<T>& f_dr, const FmParamsT<BasicTensor<T>>& p);
template <typename T>
BasicTensor<T> fmb_forward(const BasicTensor<T>& f_a, const DfmParamsT<BasicTensor<T>>& dfm_p,
                           const FmParamsT<BasicTensor<T>>& fm_p);
template <typename T>
AsffResult<T> asff_stages(const BasicTensor<T>& rgb, const BasicTensor<T>& ir, const AsffParamsT<BasicTensor<T>>& p,
                          std::size_t groups);
template <typename T>
BasicTensor<T> asff_forward(const BasicTensor<T>& rgb, const BasicTensor<T>& ir,
                            const AsffParamsT<BasicTensor<T>>& p, std::size_t groups);

}  // namespace mmfuse
