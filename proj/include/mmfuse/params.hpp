#pragma once

// Parameter containers for the fusion modules.
//
// Every container is a template over its slot type S: with S = Tensor it
// owns the weights, with S = Var it holds the same weights bound to a Tape.
// Each container lists its fields once, in `fields`, and the generic
// visit_params / map_params helpers derive naming, binding, initialisation
// and serialisation from that list. Dotted names ("dfm.entry.weight") are the
// weight-archive keys.

#include <cstdint>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "mmfuse/config.hpp"
#include "mmfuse/kernels.hpp"
#include "mmfuse/tape.hpp"
#include "mmfuse/tensor.hpp"

namespace mmfuse {

enum class ParamKind { weight, bias, bn_gamma, bn_beta, running_mean, running_var, alpha, beta };

constexpr bool is_learnable(ParamKind k) { return k != ParamKind::running_mean && k != ParamKind::running_var; }

template <typename S>
struct Conv {
  static constexpr bool is_param_group = true;
  S weight;
  S bias;
  template <typename Self, typename F>
  static void fields(Self& s, F&& f) {
    f("weight", s.weight, ParamKind::weight);
    f("bias", s.bias, ParamKind::bias);
  }
};

// Convolution followed by batch norm, so it carries no bias.
template <typename S>
struct ConvNoBias {
  static constexpr bool is_param_group = true;
  S weight;
  template <typename Self, typename F>
  static void fields(Self& s, F&& f) {
    f("weight", s.weight, ParamKind::weight);
  }
};

template <typename S>
struct BatchNorm {
  static constexpr bool is_param_group = true;
  S gamma;
  S beta;
  S running_mean;
  S running_var;
  template <typename Self, typename F>
  static void fields(Self& s, F&& f) {
    f("gamma", s.gamma, ParamKind::bn_gamma);
    f("beta", s.beta, ParamKind::bn_beta);
    f("running_mean", s.running_mean, ParamKind::running_mean);
    f("running_var", s.running_var, ParamKind::running_var);
  }
};

// CAM: k-tap conv1d across the pooled channel descriptor.
template <typename S>
struct CamParamsT {
  static constexpr bool is_param_group = true;
  Conv<S> conv;
  template <typename Self, typename F>
  static void fields(Self& s, F&& f) {
    f("conv", s.conv, ParamKind::weight);
  }
};

// PAM: one pointwise C->C conv per pooling direction.
template <typename S>
struct PamParamsT {
  static constexpr bool is_param_group = true;
  Conv<S> horizontal;
  Conv<S> vertical;
  template <typename Self, typename F>
  static void fields(Self& s, F&& f) {
    f("horizontal", s.horizontal, ParamKind::weight);
    f("vertical", s.vertical, ParamKind::weight);
  }
};

// LCAM: C -> C/r -> C bottleneck shared by the average and max branches.
template <typename S>
struct LcamParamsT {
  static constexpr bool is_param_group = true;
  Conv<S> reduce;
  Conv<S> expand;
  template <typename Self, typename F>
  static void fields(Self& s, F&& f) {
    f("reduce", s.reduce, ParamKind::weight);
    f("expand", s.expand, ParamKind::weight);
  }
};

// LPAM: 3x3 conv from the (max, mean) channel maps to one gate channel.
template <typename S>
struct LpamParamsT {
  static constexpr bool is_param_group = true;
  Conv<S> conv;
  template <typename Self, typename F>
  static void fields(Self& s, F&& f) {
    f("conv", s.conv, ParamKind::weight);
  }
};

template <typename S>
struct Modulation {
  static constexpr bool is_param_group = true;
  S alpha;
  S beta;
  template <typename Self, typename F>
  static void fields(Self& s, F&& f) {
    f("alpha", s.alpha, ParamKind::alpha);
    f("beta", s.beta, ParamKind::beta);
  }
};

template <typename S>
struct DfmParamsT {
  static constexpr bool is_param_group = true;
  Conv<S> entry;          // 1x1 C -> 2C, split into X and Y
  Conv<S> global_dw;      // 3x3 depthwise on the pooled X
  Modulation<S> modulation;
  Conv<S> global_mix;     // 1x1 C -> C producing X_m
  Conv<S> local_dw;       // 3x3 depthwise on Y
  Conv<S> local_expand;   // 1x1 C -> 2C
  Conv<S> local_reduce;   // 1x1 2C -> C
  Conv<S> exit;           // 1x1 C -> C
  template <typename Self, typename F>
  static void fields(Self& s, F&& f) {
    f("entry", s.entry, ParamKind::weight);
    f("global_dw", s.global_dw, ParamKind::weight);
    f("modulation", s.modulation, ParamKind::weight);
    f("global_mix", s.global_mix, ParamKind::weight);
    f("local_dw", s.local_dw, ParamKind::weight);
    f("local_expand", s.local_expand, ParamKind::weight);
    f("local_reduce", s.local_reduce, ParamKind::weight);
    f("exit", s.exit, ParamKind::weight);
  }
};

template <typename S>
struct FmParamsT {
  static constexpr bool is_param_group = true;
  Conv<S> expand;           // 1x1 C -> 2C
  ConvNoBias<S> cbs1_conv;  // local encoder on the C/2 split
  BatchNorm<S> cbs1_bn;
  ConvNoBias<S> dw;
  BatchNorm<S> dw_bn;
  ConvNoBias<S> cbs2_conv;
  BatchNorm<S> cbs2_bn;
  Conv<S> merge;            // 1x1 2C -> C
  template <typename Self, typename F>
  static void fields(Self& s, F&& f) {
    f("expand", s.expand, ParamKind::weight);
    f("cbs1_conv", s.cbs1_conv, ParamKind::weight);
    f("cbs1_bn", s.cbs1_bn, ParamKind::weight);
    f("dw", s.dw, ParamKind::weight);
    f("dw_bn", s.dw_bn, ParamKind::weight);
    f("cbs2_conv", s.cbs2_conv, ParamKind::weight);
    f("cbs2_bn", s.cbs2_bn, ParamKind::weight);
    f("merge", s.merge, ParamKind::weight);
  }
};

template <typename S>
struct AsffParamsT {
  static constexpr bool is_param_group = true;
  CamParamsT<S> rgb_cam;
  CamParamsT<S> ir_cam;
  Conv<S> rgb_dw;
  Conv<S> ir_dw;
  PamParamsT<S> pam;
  DfmParamsT<S> dfm;
  FmParamsT<S> fm;
  template <typename Self, typename F>
  static void fields(Self& s, F&& f) {
    f("rgb_cam", s.rgb_cam, ParamKind::weight);
    f("ir_cam", s.ir_cam, ParamKind::weight);
    f("rgb_dw", s.rgb_dw, ParamKind::weight);
    f("ir_dw", s.ir_dw, ParamKind::weight);
    f("pam", s.pam, ParamKind::weight);
    f("dfm", s.dfm, ParamKind::weight);
    f("fm", s.fm, ParamKind::weight);
  }
};

template <typename S>
struct FatmParamsT {
  static constexpr bool is_param_group = true;
  ConvNoBias<S> cbh_conv;  // 3x3 C -> C
  BatchNorm<S> cbh_bn;
  LcamParamsT<S> lcam;
  LpamParamsT<S> lpam;
  template <typename Self, typename F>
  static void fields(Self& s, F&& f) {
    f("cbh_conv", s.cbh_conv, ParamKind::weight);
    f("cbh_bn", s.cbh_bn, ParamKind::weight);
    f("lcam", s.lcam, ParamKind::weight);
    f("lpam", s.lpam, ParamKind::weight);
  }
};

using CamParams = CamParamsT<Tensor>;
using PamParams = PamParamsT<Tensor>;
using LcamParams = LcamParamsT<Tensor>;
using LpamParams = LpamParamsT<Tensor>;
using DfmParams = DfmParamsT<Tensor>;
using FmParams = FmParamsT<Tensor>;
using AsffParams = AsffParamsT<Tensor>;
using FatmParams = FatmParamsT<Tensor>;

template <typename P>
concept ParamGroup = std::remove_cvref_t<P>::is_param_group;

// Calls f(dotted_name, slot, kind) for every leaf slot in declaration order.
template <typename P, typename F>
  requires ParamGroup<P>
void visit_params(P& group, F&& f, const std::string& prefix = "") {
  std::remove_const_t<P>::fields(group, [&](std::string_view name, auto& field, ParamKind kind) {
    std::string full = prefix.empty() ? std::string(name) : prefix + "." + std::string(name);
    if constexpr (ParamGroup<decltype(field)>) {
      visit_params(field, f, full);
    } else {
      f(full, field, kind);
    }
  });
}

// Builds G<To> from G<From> by applying fn(name, from_slot, kind) per slot.
template <template <typename> class G, typename From, typename Fn>
auto map_params(const G<From>& src, Fn&& fn, const std::string& prefix = "") {
  using To = std::remove_cvref_t<decltype(fn(std::string{}, std::declval<const From&>(), ParamKind::weight))>;
  std::vector<const From*> slots;
  visit_params(src, [&](const std::string&, const From& s, ParamKind) { slots.push_back(&s); });
  G<To> dst;
  std::size_t i = 0;
  visit_params(
      dst, [&](const std::string& name, To& d, ParamKind kind) { d = fn(name, *slots[i++], kind); }, prefix);
  return dst;
}

// Places a module's weights on a tape. Learnable slots become named inputs
// (prefix + dotted name) when `differentiable`, constants otherwise; running
// statistics are always constants.
template <template <typename> class G, typename T>
G<Var> bind_params(Tape<T>& tape, const G<BasicTensor<T>>& params, const std::string& prefix,
                   bool differentiable) {
  return map_params(
      params,
      [&](const std::string& name, const BasicTensor<T>& t, ParamKind kind) {
        if (differentiable && is_learnable(kind)) return tape.input(name, t);
        return tape.constant(t);
      },
      prefix);
}

template <template <typename> class G, typename To, typename From>
G<BasicTensor<To>> cast_params(const G<BasicTensor<From>>& params) {
  return map_params(params, [](const std::string&, const BasicTensor<From>& t, ParamKind) {
    return t.template cast<To>();
  });
}

struct NamedTensor {
  std::string name;
  Tensor tensor;
  ParamKind kind = ParamKind::weight;
};

template <typename G>
  requires ParamGroup<G>
std::vector<NamedTensor> flatten_params(const G& params) {
  std::vector<NamedTensor> out;
  visit_params(params, [&](const std::string& name, const Tensor& t, ParamKind kind) {
    out.push_back({name, t, kind});
  });
  return out;
}

template <typename G>
  requires ParamGroup<G>
std::size_t learnable_count(const G& params) {
  std::size_t total = 0;
  visit_params(params, [&](const std::string&, const Tensor& t, ParamKind kind) {
    if (is_learnable(kind)) total += t.numel();
  });
  return total;
}

// Zero-filled containers with the shapes implied by `config`.
AsffParams make_asff_params(const ModuleConfig& config);
FatmParams make_fatm_params(const ModuleConfig& config);

// Deterministic initialisation: conv weights and biases uniform in
// +-sqrt(1/fan_in) drawn in declaration order; BN gamma=1, beta=0, running
// mean 0, running var 1; modulation alpha=1, beta=0.
template <typename G>
  requires ParamGroup<G>
void init_params(G& params, std::uint64_t seed);

AsffParams init_asff_params(const ModuleConfig& config, std::uint64_t seed);
FatmParams init_fatm_params(const ModuleConfig& config, std::uint64_t seed);

// Sets every slot to zero (running variance stays 1 so BN remains valid).
template <typename G>
  requires ParamGroup<G>
void zero_params(G& params) {
  visit_params(params, [](const std::string&, Tensor& t, ParamKind kind) {
    std::fill(t.data().begin(), t.data().end(), kind == ParamKind::running_var ? 1.0f : 0.0f);
  });
}

// Rebuilds a container from named tensors (e.g. a weight archive). Every
// expected name must be present with the expected shape; extra names are
// rejected. Throws FormatError on any mismatch.
template <typename G>
  requires ParamGroup<G>
void assign_params(G& params, const std::vector<NamedTensor>& entries);

}  // namespace mmfuse
