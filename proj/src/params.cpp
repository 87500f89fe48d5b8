#include "mmfuse/params.hpp"

#include <cmath>
#include <map>

#include "mmfuse/rng.hpp"

namespace mmfuse {

namespace {

Conv<Tensor> conv_slots(const ConvSpec& spec) {
  return {Tensor(spec.weight_shape()), Tensor(spec.bias_shape())};
}

ConvNoBias<Tensor> conv_nobias_slots(const ConvSpec& spec) { return {Tensor(spec.weight_shape())}; }

BatchNorm<Tensor> bn_slots(std::size_t channels) {
  const Shape s{1, channels, 1, 1};
  return {Tensor(s), Tensor(s), Tensor(s), Tensor(s)};
}

}  // namespace

AsffParams make_asff_params(const ModuleConfig& config) {
  config.validate(ModuleKind::asff);
  const std::size_t C = config.channels, k = config.cam_kernel;
  AsffParams p;
  p.rgb_cam.conv = {Tensor(Shape{1, 1, k, 1}), Tensor(Shape{})};
  p.ir_cam.conv = {Tensor(Shape{1, 1, k, 1}), Tensor(Shape{})};
  p.rgb_dw = conv_slots(ConvSpec::depthwise3x3(C));
  p.ir_dw = conv_slots(ConvSpec::depthwise3x3(C));
  p.pam.horizontal = conv_slots(ConvSpec::pointwise(C, C));
  p.pam.vertical = conv_slots(ConvSpec::pointwise(C, C));

  auto& d = p.dfm;
  d.entry = conv_slots(ConvSpec::pointwise(C, 2 * C));
  d.global_dw = conv_slots(ConvSpec::depthwise3x3(C));
  d.modulation = {Tensor(Shape{1, C, 1, 1}), Tensor(Shape{1, C, 1, 1})};
  d.global_mix = conv_slots(ConvSpec::pointwise(C, C));
  d.local_dw = conv_slots(ConvSpec::depthwise3x3(C));
  d.local_expand = conv_slots(ConvSpec::pointwise(C, 2 * C));
  d.local_reduce = conv_slots(ConvSpec::pointwise(2 * C, C));
  d.exit = conv_slots(ConvSpec::pointwise(C, C));

  const std::size_t half = C / 2;
  auto& f = p.fm;
  f.expand = conv_slots(ConvSpec::pointwise(C, 2 * C));
  f.cbs1_conv = conv_nobias_slots(ConvSpec::pointwise(half, half, false));
  f.cbs1_bn = bn_slots(half);
  f.dw = conv_nobias_slots(ConvSpec::depthwise3x3(half, false));
  f.dw_bn = bn_slots(half);
  f.cbs2_conv = conv_nobias_slots(ConvSpec::pointwise(half, half, false));
  f.cbs2_bn = bn_slots(half);
  f.merge = conv_slots(ConvSpec::pointwise(2 * C, C));
  return p;
}

FatmParams make_fatm_params(const ModuleConfig& config) {
  config.validate(ModuleKind::fatm);
  const std::size_t C = config.channels, mid = C / config.lcam_ratio;
  FatmParams p;
  p.cbh_conv = conv_nobias_slots(ConvSpec::square(C, C, 3, false));
  p.cbh_bn = bn_slots(C);
  p.lcam.reduce = conv_slots(ConvSpec::pointwise(C, mid));
  p.lcam.expand = conv_slots(ConvSpec::pointwise(mid, C));
  p.lpam.conv = conv_slots(ConvSpec::square(2, 1, 3));
  return p;
}

template <typename G>
  requires ParamGroup<G>
void init_params(G& params, std::uint64_t seed) {
  Rng rng(seed);
  double bound = 1.0;
  visit_params(params, [&](const std::string&, Tensor& t, ParamKind kind) {
    float fill = 0.0f;
    switch (kind) {
      case ParamKind::weight: {
        const std::size_t fan_in = t.c() * t.h() * t.w();
        bound = std::sqrt(1.0 / static_cast<double>(fan_in));
        for (auto& v : t.data()) v = static_cast<float>(rng.uniform(-bound, bound));
        return;
      }
      case ParamKind::bias:
        // Shares the fan-in of the weight declared just before it.
        for (auto& v : t.data()) v = static_cast<float>(rng.uniform(-bound, bound));
        return;
      case ParamKind::bn_gamma:
      case ParamKind::running_var:
      case ParamKind::alpha:
        fill = 1.0f;
        break;
      case ParamKind::bn_beta:
      case ParamKind::running_mean:
      case ParamKind::beta:
        fill = 0.0f;
        break;
    }
    std::fill(t.data().begin(), t.data().end(), fill);
  });
}

AsffParams init_asff_params(const ModuleConfig& config, std::uint64_t seed) {
  AsffParams p = make_asff_params(config);
  init_params(p, seed);
  return p;
}

FatmParams init_fatm_params(const ModuleConfig& config, std::uint64_t seed) {
  FatmParams p = make_fatm_params(config);
  init_params(p, seed);
  return p;
}

template <typename G>
  requires ParamGroup<G>
void assign_params(G& params, const std::vector<NamedTensor>& entries) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& e : entries) {
    if (!by_name.emplace(e.name, &e.tensor).second) throw FormatError("duplicate weight '" + e.name + "'");
  }
  std::size_t used = 0;
  visit_params(params, [&](const std::string& name, Tensor& slot, ParamKind) {
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError("missing weight '" + name + "'");
    if (it->second->shape() != slot.shape()) {
      throw FormatError("weight '" + name + "' has shape " + to_string(it->second->shape()) + ", expected " +
                        to_string(slot.shape()));
    }
    slot = *it->second;
    ++used;
  });
  if (used != by_name.size()) {
    throw FormatError("weight archive holds " + std::to_string(by_name.size() - used) + " unexpected entries");
  }
}

template void init_params(AsffParams&, std::uint64_t);
template void init_params(FatmParams&, std::uint64_t);
template void init_params(CamParams&, std::uint64_t);
template void init_params(PamParams&, std::uint64_t);
template void init_params(LcamParams&, std::uint64_t);
template void init_params(LpamParams&, std::uint64_t);
template void init_params(DfmParams&, std::uint64_t);
template void init_params(FmParams&, std::uint64_t);
template void assign_params(AsffParams&, const std::vector<NamedTensor>&);
template void assign_params(FatmParams&, const std::vector<NamedTensor>&);

}  // namespace mmfuse
