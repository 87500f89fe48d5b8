#include "mmfuse/module_check.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>

#include "mmfuse/asff.hpp"
#include "mmfuse/fatm.hpp"
#include "mmfuse/rng.hpp"

namespace mmfuse {

namespace {

using Builder = std::function<Var(Tape<double>&)>;

// Gathers learnable leaves of a double-precision parameter group.
template <typename G>
void add_param_leaves(G& params, std::vector<LeafRef>& leaves) {
  visit_params(params, [&](const std::string& name, TensorD& t, ParamKind kind) {
    if (is_learnable(kind)) leaves.push_back({name, &t});
  });
}

// Conv weights keep their fan-in scaled draw; the affine and statistics
// slots move off their identity defaults.
template <typename G>
void randomize_params(G& params, Rng& rng) {
  visit_params(params, [&](const std::string&, TensorD& t, ParamKind kind) {
    switch (kind) {
      case ParamKind::bn_gamma:
      case ParamKind::alpha:
        t = rng.uniform_tensor<double>(t.shape(), 0.5, 1.5);
        break;
      case ParamKind::bn_beta:
      case ParamKind::beta:
        t = rng.uniform_tensor<double>(t.shape(), -0.5, 0.5);
        break;
      case ParamKind::running_mean:
        t = rng.uniform_tensor<double>(t.shape(), -0.2, 0.2);
        break;
      case ParamKind::running_var:
        t = rng.uniform_tensor<double>(t.shape(), 0.5, 1.5);
        break;
      default:
        break;
    }
  });
}

template <typename Sub>
GradCheckReport run_check(Sub& params, std::vector<TensorD>& inputs, const std::vector<std::string>& input_names,
                          const std::function<Var(Tape<double>&, const std::vector<Var>&, const Sub&)>& body,
                          Rng& rng, double tolerance, double step) {
  std::vector<LeafRef> leaves;
  for (std::size_t i = 0; i < inputs.size(); ++i) leaves.push_back({input_names[i], &inputs[i]});
  add_param_leaves(params, leaves);
  const Builder build = [&](Tape<double>& tape) {
    std::vector<Var> in;
    for (std::size_t i = 0; i < inputs.size(); ++i) in.push_back(tape.input(input_names[i], inputs[i]));
    return body(tape, in, params);
  };
  Tape<double> probe;
  const Shape out_shape = probe.shape(build(probe));
  const TensorD seed = rng.normal_tensor<double>(out_shape);
  return check_gradients(build, leaves, seed, step, tolerance);
}

template <template <typename> class G>
using BodyFn = std::function<Var(Tape<double>&, const std::vector<Var>&, const G<Var>&)>;

template <template <typename> class G>
GradCheckReport check_group(G<TensorD> params, std::vector<TensorD> inputs, std::vector<std::string> names,
                            const BodyFn<G>& body, Rng& rng, double tolerance, double step) {
  using Sub = G<TensorD>;
  const std::function<Var(Tape<double>&, const std::vector<Var>&, const Sub&)> wrapped =
      [&](Tape<double>& tape, const std::vector<Var>& in, const Sub& p) {
        return body(tape, in, bind_params(tape, p, "", true));
      };
  return run_check<Sub>(params, inputs, names, wrapped, rng, tolerance, step);
}

AsffParamsT<TensorD> random_asff(const ModuleConfig& cfg, Rng& rng, std::uint64_t seed) {
  auto p = cast_params<AsffParamsT, double>(init_asff_params(cfg, seed));
  randomize_params(p, rng);
  return p;
}

FatmParamsT<TensorD> random_fatm(const ModuleConfig& cfg, Rng& rng, std::uint64_t seed) {
  auto p = cast_params<FatmParamsT, double>(init_fatm_params(cfg, seed));
  randomize_params(p, rng);
  return p;
}

}  // namespace

const std::vector<std::string>& checkable_modules() {
  static const std::vector<std::string> names = {"asff", "asff-train", "attention", "cam", "pam", "dfm", "fm",
                                                 "fm-train", "fatm", "fatm-train", "lcam", "lpam"};
  return names;
}

GradCheckReport check_module_gradients(const std::string& module, const ModuleConfig& config, std::uint64_t seed,
                                       double tolerance, double step) {
  const bool is_asff = module == "asff" || module == "asff-train" || module == "attention" || module == "cam" ||
                       module == "pam" || module == "dfm" || module == "fm" || module == "fm-train";
  const bool is_fatm = module == "fatm" || module == "fatm-train" || module == "lcam" || module == "lpam";
  if (!is_asff && !is_fatm) throw ConfigError("unknown module '" + module + "' for gradient check");
  config.validate(is_asff ? ModuleKind::asff : ModuleKind::fatm);

  Rng rng(seed);
  const Shape s = config.input_shape();
  const auto input = [&] { return rng.normal_tensor<double>(s); };
  const std::size_t G = config.groups;
  const bool halve = config.halve_lcam_gate;

  if (is_asff) {
    auto p = random_asff(config, rng, seed);
    if (module == "asff" || module == "asff-train") {
      const BnMode mode = module == "asff" ? BnMode::infer : BnMode::train;
      return check_group<AsffParamsT>(p, {input(), input()}, {"rgb", "ir"},
                                      [&](Tape<double>& t, const std::vector<Var>& in, const AsffParamsT<Var>& q) {
                                        return asff(t, in[0], in[1], q, G, mode).shuffled;
                                      },
                                      rng, tolerance, step);
    }
    if (module == "attention") {
      return check_group<AsffParamsT>(p, {input(), input()}, {"rgb", "ir"},
                                      [&](Tape<double>& t, const std::vector<Var>& in, const AsffParamsT<Var>& q) {
                                        return attention_fusion(t, in[0], in[1], q);
                                      },
                                      rng, tolerance, step);
    }
    if (module == "cam") {
      return check_group<CamParamsT>(p.rgb_cam, {input()}, {"x"},
                                     [&](Tape<double>& t, const std::vector<Var>& in, const CamParamsT<Var>& q) {
                                       return cam(t, in[0], q);
                                     },
                                     rng, tolerance, step);
    }
    if (module == "pam") {
      return check_group<PamParamsT>(p.pam, {input()}, {"x"},
                                     [&](Tape<double>& t, const std::vector<Var>& in, const PamParamsT<Var>& q) {
                                       return pam(t, in[0], q);
                                     },
                                     rng, tolerance, step);
    }
    if (module == "dfm") {
      return check_group<DfmParamsT>(p.dfm, {input()}, {"x"},
                                     [&](Tape<double>& t, const std::vector<Var>& in, const DfmParamsT<Var>& q) {
                                       return dfm(t, in[0], q);
                                     },
                                     rng, tolerance, step);
    }
    const BnMode mode = module == "fm" ? BnMode::infer : BnMode::train;
    return check_group<FmParamsT>(p.fm, {input()}, {"x"},
                                  [&](Tape<double>& t, const std::vector<Var>& in, const FmParamsT<Var>& q) {
                                    return fm(t, in[0], q, mode);
                                  },
                                  rng, tolerance, step);
  }

  auto p = random_fatm(config, rng, seed);
  if (module == "fatm" || module == "fatm-train") {
    const BnMode mode = module == "fatm" ? BnMode::infer : BnMode::train;
    return check_group<FatmParamsT>(p, {input()}, {"x"},
                                    [&](Tape<double>& t, const std::vector<Var>& in, const FatmParamsT<Var>& q) {
                                      return fatm(t, in[0], q, mode, halve).output;
                                    },
                                    rng, tolerance, step);
  }
  if (module == "lcam") {
    return check_group<LcamParamsT>(p.lcam, {input()}, {"x"},
                                    [&](Tape<double>& t, const std::vector<Var>& in, const LcamParamsT<Var>& q) {
                                      return t.mul(in[0], lcam_gate(t, in[0], q, halve));
                                    },
                                    rng, tolerance, step);
  }
  return check_group<LpamParamsT>(p.lpam, {input()}, {"x"},
                                  [&](Tape<double>& t, const std::vector<Var>& in, const LpamParamsT<Var>& q) {
                                    return t.mul(in[0], lpam_gate(t, in[0], q));
                                  },
                                  rng, tolerance, step);
}

namespace {

// Distinct values with pairwise gaps of at least 0.05, shuffled.
TensorD spread(Shape s, Rng& rng) {
  std::vector<std::size_t> order(s.numel());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.next() % i]);
  TensorD t(s);
  const double start = -0.025 * static_cast<double>(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) t[i] = start + 0.05 * static_cast<double>(order[i]);
  return t;
}

// Normal draws kept at least `margin` away from each breakpoint.
TensorD away_from(Shape s, Rng& rng, const std::vector<double>& breakpoints, double stddev, double margin = 0.02) {
  TensorD t = rng.normal_tensor<double>(s, stddev);
  for (auto& v : t.data()) {
    for (double b : breakpoints) {
      if (std::abs(v - b) < margin) v = v < b ? b - margin : b + margin;
    }
  }
  return t;
}

struct PrimitiveCase {
  std::vector<std::pair<std::string, TensorD>> leaves;
  std::function<Var(Tape<double>&, const std::map<std::string, Var>&)> body;
};

PrimitiveCase conv_case(const ConvSpec& spec, Shape in, Rng& rng) {
  PrimitiveCase c;
  c.leaves.emplace_back("x", rng.normal_tensor<double>(in));
  c.leaves.emplace_back("weight", rng.normal_tensor<double>(spec.weight_shape(), 0.5));
  if (spec.has_bias) c.leaves.emplace_back("bias", rng.normal_tensor<double>(spec.bias_shape(), 0.5));
  c.body = [spec](Tape<double>& t, const std::map<std::string, Var>& v) {
    const auto b = spec.has_bias ? std::optional<Var>(v.at("bias")) : std::nullopt;
    return t.conv2d(v.at("x"), spec, v.at("weight"), b);
  };
  return c;
}

PrimitiveCase unary_case(TensorD x, std::function<Var(Tape<double>&, Var)> op) {
  PrimitiveCase c;
  c.leaves.emplace_back("x", std::move(x));
  c.body = [op](Tape<double>& t, const std::map<std::string, Var>& v) { return op(t, v.at("x")); };
  return c;
}

PrimitiveCase binary_case(TensorD a, TensorD b, BinaryOp op) {
  PrimitiveCase c;
  c.leaves.emplace_back("a", std::move(a));
  c.leaves.emplace_back("b", std::move(b));
  c.body = [op](Tape<double>& t, const std::map<std::string, Var>& v) { return t.binary(v.at("a"), v.at("b"), op); };
  return c;
}

PrimitiveCase batch_norm_case(BnMode mode, Rng& rng) {
  const Shape s{3, 4, 3, 3};
  const Shape ch{1, 4, 1, 1};
  PrimitiveCase c;
  c.leaves.emplace_back("x", rng.normal_tensor<double>(s));
  c.leaves.emplace_back("gamma", rng.uniform_tensor<double>(ch, 0.5, 1.5));
  c.leaves.emplace_back("beta", rng.uniform_tensor<double>(ch, -0.5, 0.5));
  const TensorD rm = rng.uniform_tensor<double>(ch, -0.2, 0.2);
  const TensorD rv = rng.uniform_tensor<double>(ch, 0.5, 1.5);
  c.body = [mode, rm, rv](Tape<double>& t, const std::map<std::string, Var>& v) {
    return t.batch_norm(v.at("x"), v.at("gamma"), v.at("beta"), t.constant(rm), t.constant(rv), mode);
  };
  return c;
}

PrimitiveCase make_primitive_case(const std::string& name, Rng& rng) {
  const Shape img{2, 3, 5, 6};
  if (name == "conv2d") return conv_case(ConvSpec::square(3, 4, 3), img, rng);
  if (name == "conv2d-strided") return conv_case({3, 4, 3, 3, 2, 1, 1, true}, img, rng);
  if (name == "conv2d-grouped") return conv_case({4, 6, 3, 1, 1, 1, 2, false}, Shape{2, 4, 5, 4}, rng);
  if (name == "conv2d-depthwise") return conv_case(ConvSpec::depthwise3x3(3), img, rng);
  if (name == "conv1d") {
    PrimitiveCase c;
    c.leaves.emplace_back("x", rng.normal_tensor<double>(Shape{2, 1, 7, 1}));
    c.leaves.emplace_back("weight", rng.normal_tensor<double>(Shape{1, 1, 3, 1}));
    c.leaves.emplace_back("bias", rng.normal_tensor<double>(Shape{1, 1, 1, 1}));
    c.body = [](Tape<double>& t, const std::map<std::string, Var>& v) {
      return t.conv1d(v.at("x"), 3, v.at("weight"), v.at("bias"));
    };
    return c;
  }
  if (name == "avg-pool") {
    return unary_case(rng.normal_tensor<double>(Shape{2, 3, 5, 7}),
                      [](Tape<double>& t, Var x) { return t.adaptive_pool(x, 2, 3, PoolMode::avg); });
  }
  if (name == "max-pool") {
    return unary_case(spread(Shape{2, 3, 5, 7}, rng),
                      [](Tape<double>& t, Var x) { return t.adaptive_pool(x, 2, 3, PoolMode::max); });
  }
  if (name == "channel-avg") {
    return unary_case(rng.normal_tensor<double>(img), [](Tape<double>& t, Var x) {
      return t.channel_pool(x, PoolMode::avg);
    });
  }
  if (name == "channel-max") {
    return unary_case(spread(img, rng), [](Tape<double>& t, Var x) { return t.channel_pool(x, PoolMode::max); });
  }
  const std::map<std::string, ActivationKind> activations = {{"sigmoid", ActivationKind::sigmoid},
                                                             {"relu", ActivationKind::relu},
                                                             {"gelu", ActivationKind::gelu},
                                                             {"silu", ActivationKind::silu},
                                                             {"hardswish", ActivationKind::hardswish}};
  if (const auto it = activations.find(name); it != activations.end()) {
    const ActivationKind kind = it->second;
    return unary_case(away_from(img, rng, {-3.0, 0.0, 3.0}, 2.5),
                      [kind](Tape<double>& t, Var x) { return t.activation(x, kind); });
  }
  if (name == "batch-norm-train") return batch_norm_case(BnMode::train, rng);
  if (name == "batch-norm-infer") return batch_norm_case(BnMode::infer, rng);
  if (name == "upsample") {
    return unary_case(rng.normal_tensor<double>(Shape{2, 3, 3, 2}),
                      [](Tape<double>& t, Var x) { return t.upsample_nearest(x, 2); });
  }
  if (name == "l2-normalize") {
    return unary_case(rng.normal_tensor<double>(img), [](Tape<double>& t, Var x) { return t.l2_normalize_channels(x); });
  }
  if (name == "channel-variance") {
    return unary_case(rng.normal_tensor<double>(img), [](Tape<double>& t, Var x) { return t.channel_variance(x); });
  }
  if (name == "add") return binary_case(rng.normal_tensor<double>(img), rng.normal_tensor<double>(Shape{1, 3, 1, 1}), BinaryOp::add);
  if (name == "sub") return binary_case(rng.normal_tensor<double>(img), rng.normal_tensor<double>(Shape{2, 1, 5, 1}), BinaryOp::sub);
  if (name == "mul") return binary_case(rng.normal_tensor<double>(img), rng.normal_tensor<double>(Shape{2, 3, 1, 6}), BinaryOp::mul);
  if (name == "split-concat") {
    return unary_case(rng.normal_tensor<double>(Shape{2, 5, 3, 3}), [](Tape<double>& t, Var x) {
      const auto parts = t.channel_split(x, {2, 3});
      return t.channel_concat({t.mul(parts[1], parts[1]), parts[0]});
    });
  }
  if (name == "shuffle") {
    return unary_case(rng.normal_tensor<double>(Shape{2, 6, 2, 3}), [](Tape<double>& t, Var x) {
      return t.mul(t.channel_shuffle(x, 3), t.channel_shuffle(x, 2));
    });
  }
  if (name == "reshape") {
    return unary_case(rng.normal_tensor<double>(img), [](Tape<double>& t, Var x) {
      const Var r = t.reshape(x, Shape{1, 6, 6, 5});
      return t.mul(r, r);
    });
  }
  if (name == "sum") {
    return unary_case(rng.normal_tensor<double>(img), [](Tape<double>& t, Var x) { return t.sum(t.mul(x, x)); });
  }
  if (name == "mean") {
    return unary_case(rng.normal_tensor<double>(img), [](Tape<double>& t, Var x) { return t.mean(t.mul(x, x)); });
  }
  throw ConfigError("unknown primitive '" + name + "' for gradient check");
}

}  // namespace

const std::vector<std::string>& checkable_primitives() {
  static const std::vector<std::string> names = {
      "conv2d",  "conv2d-strided", "conv2d-grouped", "conv2d-depthwise", "conv1d",           "avg-pool",
      "max-pool", "channel-avg",   "channel-max",    "sigmoid",          "relu",             "gelu",
      "silu",     "hardswish",     "batch-norm-train", "batch-norm-infer", "upsample",       "l2-normalize",
      "channel-variance", "add",   "sub",            "mul",              "split-concat",     "shuffle",
      "reshape",  "sum",           "mean"};
  return names;
}

GradCheckReport check_primitive_gradients(const std::string& primitive, std::uint64_t seed, double tolerance,
                                          double step) {
  Rng rng(seed);
  PrimitiveCase c = make_primitive_case(primitive, rng);
  std::vector<LeafRef> leaves;
  for (auto& [name, value] : c.leaves) leaves.push_back({name, &value});
  const Builder build = [&](Tape<double>& tape) {
    std::map<std::string, Var> vars;
    for (auto& [name, value] : c.leaves) vars.emplace(name, tape.input(name, value));
    return c.body(tape, vars);
  };
  Tape<double> probe;
  const TensorD seed_tensor = rng.normal_tensor<double>(probe.shape(build(probe)));
  return check_gradients(build, leaves, seed_tensor, step, tolerance);
}

}  // namespace mmfuse
