#include "mmfuse/cost_model.hpp"

#include "mmfuse/error.hpp"

namespace mmfuse {

std::uint64_t conv_param_count(std::uint64_t in, std::uint64_t out, std::uint64_t kh, std::uint64_t kw,
                               std::uint64_t groups, bool bias) {
  return out * (in / groups) * kh * kw + (bias ? out : 0);
}

std::uint64_t conv_mac_count(std::uint64_t out_positions, std::uint64_t in, std::uint64_t out, std::uint64_t kh,
                             std::uint64_t kw, std::uint64_t groups) {
  return out_positions * out * (in / groups) * kh * kw;
}

namespace {

using u64 = std::uint64_t;

class LayerTable {
 public:
  explicit LayerTable(std::string prefix = "") : prefix_(std::move(prefix)) {}

  // Stride-1 "same" convolution evaluated at `positions` output locations.
  void conv(const std::string& name, u64 in, u64 out, u64 k, u64 groups, bool bias, u64 positions,
            u64 applications = 1) {
    LayerCost l;
    l.name = full(name);
    l.kind = groups == in && groups == out && groups > 1 ? "depthwise_conv" : "conv";
    l.params = conv_param_count(in, out, k, k, groups, bias);
    l.macs = applications * conv_mac_count(positions, in, out, k, k, groups);
    l.tensors.push_back({full(name) + ".weight", Shape{out, in / groups, k, k}, true});
    if (bias) l.tensors.push_back({full(name) + ".bias", Shape{1, out, 1, 1}, true});
    layers_.push_back(std::move(l));
  }

  // 1-D conv across a length-`length` channel descriptor, `batch` times.
  void conv1d(const std::string& name, u64 taps, u64 length, u64 batch) {
    LayerCost l;
    l.name = full(name);
    l.kind = "conv1d";
    l.params = taps + 1;
    l.macs = conv_mac_count(batch * length, 1, 1, taps, 1, 1);
    l.tensors.push_back({full(name) + ".weight", Shape{1, 1, taps, 1}, true});
    l.tensors.push_back({full(name) + ".bias", Shape{1, 1, 1, 1}, true});
    layers_.push_back(std::move(l));
  }

  void batch_norm(const std::string& name, u64 channels, u64 elements) {
    LayerCost l;
    l.name = full(name);
    l.kind = "batch_norm";
    l.params = 2 * channels;
    l.buffers = 2 * channels;
    l.other_ops = elements;
    const Shape s{1, channels, 1, 1};
    for (const char* field : {"gamma", "beta"}) l.tensors.push_back({full(name) + "." + field, s, true});
    for (const char* field : {"running_mean", "running_var"}) {
      l.tensors.push_back({full(name) + "." + field, s, false});
    }
    layers_.push_back(std::move(l));
  }

  void modulation(const std::string& name, u64 channels, u64 ops) {
    LayerCost l;
    l.name = full(name);
    l.kind = "modulation";
    l.params = 2 * channels;
    l.other_ops = ops;
    l.tensors.push_back({full(name) + ".alpha", Shape{1, channels, 1, 1}, true});
    l.tensors.push_back({full(name) + ".beta", Shape{1, channels, 1, 1}, true});
    layers_.push_back(std::move(l));
  }

  void op(const std::string& name, const std::string& kind, u64 other_ops) {
    LayerCost l;
    l.name = full(name);
    l.kind = kind;
    l.other_ops = other_ops;
    layers_.push_back(std::move(l));
  }

  std::vector<LayerCost> take() { return std::move(layers_); }

 private:
  std::string full(const std::string& name) const { return prefix_ + name; }

  std::string prefix_;
  std::vector<LayerCost> layers_;
};

std::vector<LayerCost> asff_layers(const ModuleConfig& cfg, const std::string& prefix) {
  const u64 N = cfg.batch, C = cfg.channels, H = cfg.height, W = cfg.width, k = cfg.cam_kernel;
  const u64 P = N * H * W;
  const u64 h2 = (H + 1) / 2, w2 = (W + 1) / 2, P2 = N * h2 * w2;
  const u64 E = N * C * H * W;
  const u64 half = C / 2;
  LayerTable t(prefix);

  for (const char* m : {"rgb", "ir"}) {
    const std::string cam = std::string(m) + "_cam";
    t.op(cam + ".pool", "pool", E);
    t.conv1d(cam + ".conv", k, C, N);
    t.op(cam + ".gate", "activation", N * C);
    t.op(cam + ".apply", "elementwise", E);
    t.op(cam + ".residual", "elementwise", E);
  }
  t.conv("rgb_dw", C, C, 3, C, true, P);
  t.conv("ir_dw", C, C, 3, C, true, P);
  t.op("modal_sum", "elementwise", E);

  t.op("pam.pool_h", "pool", E);
  t.op("pam.pool_v", "pool", E);
  t.conv("pam.horizontal", C, C, 1, 1, true, N * H);
  t.conv("pam.vertical", C, C, 1, 1, true, N * W);
  t.op("pam.gates", "activation", N * C * (H + W));
  t.op("pam.apply", "elementwise", 2 * E);

  t.op("dfm.l2norm", "normalize", E);
  t.conv("dfm.entry", C, 2 * C, 1, 1, true, P);
  t.op("dfm.global_pool", "pool", E);
  t.conv("dfm.global_dw", C, C, 3, C, true, P2);
  t.op("dfm.variance", "pool", E);
  t.modulation("dfm.modulation", C, 2 * N * C * h2 * w2 + N * C);
  t.conv("dfm.global_mix", C, C, 1, 1, true, P2);
  t.op("dfm.global_gelu", "activation", N * C * h2 * w2);
  t.op("dfm.global_upsample", "upsample", 0);
  t.op("dfm.global_apply", "elementwise", E);
  t.conv("dfm.local_dw", C, C, 3, C, true, P);
  t.conv("dfm.local_expand", C, 2 * C, 1, 1, true, P);
  t.op("dfm.local_gelu", "activation", 2 * E);
  t.conv("dfm.local_reduce", 2 * C, C, 1, 1, true, P);
  t.op("dfm.branch_sum", "elementwise", E);
  t.conv("dfm.exit", C, C, 1, 1, true, P);
  t.op("dfm.residual", "elementwise", E);

  t.op("fm.l2norm", "normalize", E);
  t.conv("fm.expand", C, 2 * C, 1, 1, true, P);
  t.op("fm.expand_gelu", "activation", 2 * E);
  t.conv("fm.cbs1_conv", half, half, 1, 1, false, P);
  t.batch_norm("fm.cbs1_bn", half, P * half);
  t.op("fm.cbs1_silu", "activation", P * half);
  t.conv("fm.dw", half, half, 3, half, false, P);
  t.batch_norm("fm.dw_bn", half, P * half);
  t.conv("fm.cbs2_conv", half, half, 1, 1, false, P);
  t.batch_norm("fm.cbs2_bn", half, P * half);
  t.op("fm.cbs2_silu", "activation", P * half);
  t.op("fm.encode_gelu", "activation", P * half);
  t.conv("fm.merge", 2 * C, C, 1, 1, true, P);
  t.op("fm.residual", "elementwise", E);

  t.op("shuffle", "shuffle", 0);
  return t.take();
}

std::vector<LayerCost> fatm_layers(const ModuleConfig& cfg, const std::string& prefix) {
  const u64 N = cfg.batch, C = cfg.channels, H = cfg.height, W = cfg.width;
  const u64 P = N * H * W, E = N * C * H * W;
  const u64 mid = C / cfg.lcam_ratio;
  LayerTable t(prefix);
  t.conv("cbh_conv", C, C, 3, 1, false, P);
  t.batch_norm("cbh_bn", C, E);
  t.op("cbh_hardswish", "activation", E);
  t.op("lcam.avg_pool", "pool", E);
  t.op("lcam.max_pool", "pool", E);
  // The bottleneck convs are shared by both pooled branches.
  t.conv("lcam.reduce", C, mid, 1, 1, true, N, 2);
  t.op("lcam.relu", "activation", 2 * N * mid);
  t.conv("lcam.expand", mid, C, 1, 1, true, N, 2);
  t.op("lcam.gate", "activation", 3 * N * C + (cfg.halve_lcam_gate ? N * C : 0));
  t.op("lcam.apply", "elementwise", E);
  t.op("lpam.channel_max", "pool", E);
  t.op("lpam.channel_mean", "pool", E);
  t.conv("lpam.conv", 2, 1, 3, 1, true, P);
  t.op("lpam.gate", "activation", P);
  t.op("lpam.apply", "elementwise", E);
  return t.take();
}

void total(CostReport& r) {
  r.total_params = r.total_buffers = r.total_macs = r.total_other_ops = 0;
  for (const auto& l : r.layers) {
    r.total_params += l.params;
    r.total_buffers += l.buffers;
    r.total_macs += l.macs;
    r.total_other_ops += l.other_ops;
  }
}

}  // namespace

CostReport cost_report(const ModuleConfig& config, ModuleKind which) {
  config.validate(which);
  CostReport r{module_name(which), config, {}};
  r.layers = which == ModuleKind::asff ? asff_layers(config, "") : fatm_layers(config, "");
  total(r);
  return r;
}

std::vector<TensorSpec> weight_manifest(const ModuleConfig& config, ModuleKind which) {
  // Archive order is declaration order of the parameter containers; the two
  // CAM convs precede the two depthwise convs there.
  std::vector<TensorSpec> out;
  for (const auto& l : cost_report(config, which).layers) {
    out.insert(out.end(), l.tensors.begin(), l.tensors.end());
  }
  return out;
}

FusionComparison compare_fusion_baselines(const ModuleConfig& config, std::size_t n_fusion_units) {
  if (n_fusion_units == 0) throw ConfigError("number of fusion units must be >= 1");
  FusionComparison cmp{cost_report(config, ModuleKind::asff), CostReport{"asff-multi", config, {}}};
  ModuleConfig scale = config;
  for (std::size_t i = 0; i < n_fusion_units; ++i) {
    scale.validate(ModuleKind::asff);
    auto layers = asff_layers(scale, "scale" + std::to_string(i) + ".");
    cmp.multi.layers.insert(cmp.multi.layers.end(), layers.begin(), layers.end());
    scale.channels *= 2;
    scale.height = (scale.height + 1) / 2;
    scale.width = (scale.width + 1) / 2;
  }
  total(cmp.multi);
  return cmp;
}

}  // namespace mmfuse
