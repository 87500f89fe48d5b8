// Acceptance suite. Prints one PASS/FAIL line per criterion, with
// supporting detail on indented "info" lines. `--criterion N` runs one.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "mmfuse/asff.hpp"
#include "mmfuse/cli.hpp"
#include "mmfuse/cost_model.hpp"
#include "mmfuse/fatm.hpp"
#include "mmfuse/io.hpp"
#include "mmfuse/module_check.hpp"
#include "mmfuse/toy.hpp"
#include "oracle/reference.hpp"
#include "support.hpp"

using namespace mmfuse;
using testing_support::relative_error;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Outcome {
  bool passed;
  std::string summary;
};

void info(const std::string& line) { std::cout << "    info: " << line << "\n"; }

std::string fmt(double v, int precision = 3) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

// Tolerances and budgets.
constexpr double kGradSuiteBudgetSeconds = 120.0;
constexpr double kMaxStraddlingFraction = 0.05;
constexpr double kOracleTolerance = 1e-6;
constexpr double kToyBudgetSeconds = 300.0;
constexpr double kToyLossRatio = 0.5;

ModuleConfig grad_config() {
  ModuleConfig c;
  c.batch = 2;
  c.channels = 8;
  c.height = 8;
  c.width = 8;
  c.groups = 2;
  c.lcam_ratio = 4;
  return c;
}

Outcome gradient_suite() {
  const auto start = Clock::now();
  bool ok = true;
  double worst = 0;
  std::size_t elements = 0, straddling = 0, checks = 0;
  std::string worst_name;
  const auto absorb = [&](const std::string& name, const GradCheckReport& r) {
    ++checks;
    elements += r.elements;
    straddling += r.straddling;
    if (r.worst > worst) {
      worst = r.worst;
      worst_name = name;
    }
    if (!r.passed) {
      ok = false;
      info("failed: " + name + " worst " + fmt(r.worst));
    }
  };
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    for (const auto& prim : checkable_primitives()) {
      absorb(prim + "@" + std::to_string(seed), check_primitive_gradients(prim, seed));
    }
    absorb("asff@" + std::to_string(seed), check_module_gradients("asff", grad_config(), seed));
    absorb("fatm@" + std::to_string(seed), check_module_gradients("fatm", grad_config(), seed));
  }
  const double elapsed = seconds_since(start);
  const double frac = elements ? static_cast<double>(straddling) / static_cast<double>(elements) : 0.0;
  info(std::to_string(checks) + " checks over " + std::to_string(checkable_primitives().size()) +
       " primitives + asff + fatm, 20 seeds each");
  info("kink-straddling elements excluded: " + std::to_string(straddling) + "/" + std::to_string(elements) + " (" +
       fmt(100 * frac) + "%, cap " + fmt(100 * kMaxStraddlingFraction) + "%)");
  const bool in_budget = elapsed < kGradSuiteBudgetSeconds;
  const bool passed = ok && in_budget && frac <= kMaxStraddlingFraction;
  return {passed, "gradient suite: worst relative error " + fmt(worst) + " (" + worst_name + ", tol 1e-3), " +
                      fmt(elapsed) + " s (budget " + fmt(kGradSuiteBudgetSeconds) + " s)"};
}

ModuleConfig asff_config(std::size_t c = 8, std::size_t hw = 8) {
  ModuleConfig cfg;
  cfg.batch = 2;
  cfg.channels = c;
  cfg.height = hw;
  cfg.width = hw;
  cfg.groups = 2;
  cfg.lcam_ratio = 4;
  return cfg;
}

Outcome residual_identity() {
  bool identity_ok = true, zero_ok = true;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const ModuleConfig cfg = asff_config();
    Rng rng(seed);
    const Tensor rgb = rng.normal_tensor<float>(cfg.input_shape());
    const Tensor ir = rng.normal_tensor<float>(cfg.input_shape());

    AsffParams p = init_asff_params(cfg, seed);
    zero_params(p.dfm);
    zero_params(p.fm);
    const auto stages = asff_stages(rgb, ir, p, cfg.groups);
    identity_ok = identity_ok && testing_support::same_values(stages.modulation, stages.attention);

    AsffParams z = init_asff_params(cfg, seed);
    zero_params(z);
    const Tensor fused = asff_forward(rgb, ir, z, cfg.groups);
    zero_ok = zero_ok && std::all_of(fused.data().begin(), fused.data().end(), [](float v) { return v == 0.0f; });
  }
  info(std::string("zeroed DFM+FM: F_b == F_a on 10 seeds: ") + (identity_ok ? "yes" : "no"));
  info(std::string("zeroed ASFF: F_c == 0 on 10 seeds: ") + (zero_ok ? "yes" : "no"));
  return {identity_ok && zero_ok, "residual identity: F_b = F_a exactly with DFM+FM zeroed; F_c = 0 with all weights zeroed"};
}

Outcome shuffle_algebra() {
  std::size_t cases = 0;
  bool ok = true;
  Rng rng(99);
  for (std::size_t C = 1; C <= 12; ++C) {
    for (std::size_t G = 1; G <= C; ++G) {
      if (C % G != 0) continue;
      ++cases;
      const Shape s{2, C, 3, 4};
      // Strictly increasing values: every element is distinct.
      Tensor x(s);
      for (std::size_t i = 0; i < x.numel(); ++i) x[i] = static_cast<float>(i) + 0.5f * rng.unit();
      const Tensor y = channel_shuffle(x, G);
      const Tensor back = channel_shuffle(y, C / G);
      ok = ok && back == x;

      // Brute force: for every output channel find the input channel that
      // holds the same value at the first position, then require the match at
      // every position.
      std::set<std::size_t> used;
      for (std::size_t j = 0; j < C; ++j) {
        std::size_t src = C;
        for (std::size_t i = 0; i < C; ++i) {
          if (y.at(0, j, 0, 0) == x.at(0, i, 0, 0)) src = i;
        }
        if (src == C || !used.insert(src).second) {
          ok = false;
          continue;
        }
        for (std::size_t n = 0; n < s.n; ++n)
          for (std::size_t h = 0; h < s.h; ++h)
            for (std::size_t w = 0; w < s.w; ++w) ok = ok && y.at(n, j, h, w) == x.at(n, src, h, w);
      }
    }
  }
  info(std::to_string(cases) + " (C, G) pairs with C <= 12");
  return {ok, "shuffle algebra: shuffle(G) then shuffle(C/G) is the identity and each shuffle is a fixed channel permutation"};
}

Outcome gate_ranges() {
  std::size_t violations = 0, elements = 0;
  double cam_lo = 1, cam_hi = 0, pam_lo = 1, pam_hi = 0, lcam_lo = 2, lcam_hi = 0, lpam_lo = 1, lpam_hi = 0;
  const auto track = [&](const Tensor& g, double lo, double hi, double& seen_lo, double& seen_hi) {
    for (float v : g.data()) {
      ++elements;
      if (!(v > lo && v < hi)) ++violations;
      seen_lo = std::min(seen_lo, static_cast<double>(v));
      seen_hi = std::max(seen_hi, static_cast<double>(v));
    }
  };
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(1000 + seed);
    ModuleConfig cfg = asff_config();
    cfg.batch = 1 + seed % 3;
    cfg.height = 4 + 2 * (seed % 4);
    cfg.width = 4 + 2 * ((seed / 4) % 4);
    const double scale = 0.1 + 3.0 * rng.unit();
    const Tensor x = rng.normal_tensor<float>(cfg.input_shape(), scale);
    const AsffParams a = init_asff_params(cfg, seed);
    const FatmParams f = init_fatm_params(cfg, seed);
    track(cam_gate_values(x, a.rgb_cam), 0, 1, cam_lo, cam_hi);
    const auto [h, v] = pam_gate_values(x, a.pam);
    track(h, 0, 1, pam_lo, pam_hi);
    track(v, 0, 1, pam_lo, pam_hi);
    track(lcam_forward(x, f.lcam), 0, 2, lcam_lo, lcam_hi);
    track(lpam_forward(x, f.lpam), 0, 1, lpam_lo, lpam_hi);
  }
  info("CAM [" + fmt(cam_lo) + ", " + fmt(cam_hi) + "]  PAM [" + fmt(pam_lo) + ", " + fmt(pam_hi) + "]  LCAM [" +
       fmt(lcam_lo) + ", " + fmt(lcam_hi) + "]  LPAM [" + fmt(lpam_lo) + ", " + fmt(lpam_hi) + "]");
  return {violations == 0, "gate ranges: " + std::to_string(violations) + " violations in " +
                               std::to_string(elements) + " gate elements over 100 inputs"};
}

Outcome oracle_equivalence() {
  double worst_asff = 0, worst_fatm = 0, worst_float = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    ModuleConfig cfg = asff_config();
    cfg.groups = seed % 2 ? 2 : 4;
    Rng rng(500 + seed);
    const TensorD rgb = rng.normal_tensor<double>(cfg.input_shape());
    const TensorD ir = rng.normal_tensor<double>(cfg.input_shape());
    const auto ap = testing_support::random_double_params<AsffParamsT>(init_asff_params(cfg, seed), seed);
    const auto got = asff_stages(rgb, ir, ap, cfg.groups);
    const auto want = oracle::asff(oracle::Grid(rgb), oracle::Grid(ir), ap, cfg.groups);
    worst_asff = std::max({worst_asff, relative_error(got.attention, want.attention.tensor()),
                           relative_error(got.modulation, want.modulation.tensor()),
                           relative_error(got.fused, want.fused.tensor())});

    const bool halve = seed % 5 == 4;
    const auto fp = testing_support::random_double_params<FatmParamsT>(init_fatm_params(cfg, seed), seed);
    const auto fgot = fatm_forward(rgb, fp, halve);
    const auto fwant = oracle::fatm(oracle::Grid(rgb), fp, halve);
    worst_fatm = std::max(worst_fatm, relative_error(fgot, fwant.output.tensor()));

    const auto af = cast_params<AsffParamsT, float>(ap);
    const Tensor ffused = asff_forward(rgb.cast<float>(), ir.cast<float>(), af, cfg.groups);
    worst_float = std::max(worst_float, relative_error(ffused, want.fused.tensor()));
  }
  info("asff (stages F_a, F_b, F_c) worst " + fmt(worst_asff) + "; fatm worst " + fmt(worst_fatm) +
       "; float-precision asff vs oracle worst " + fmt(worst_float) + " (reported only)");
  const bool ok = worst_asff <= kOracleTolerance && worst_fatm <= kOracleTolerance;
  return {ok, "oracle equivalence: 50 seeds, worst relative error " + fmt(std::max(worst_asff, worst_fatm)) +
                  " (tol 1e-6)"};
}

// Sum of numel over allocated tensors, by learnable flag and by layer prefix.
template <typename G>
void enumerate(const G& params, std::map<std::string, std::uint64_t>& learnable,
               std::map<std::string, std::uint64_t>& buffers, std::uint64_t& total) {
  visit_params(params, [&](const std::string& name, const Tensor& t, ParamKind kind) {
    const std::string layer = name.substr(0, name.rfind('.'));
    if (is_learnable(kind)) {
      learnable[layer] += t.numel();
      total += t.numel();
    } else {
      buffers[layer] += t.numel();
    }
  });
}

Outcome cost_exactness() {
  Rng rng(2024);
  std::size_t configs = 0;
  bool counts_ok = true, manifest_ok = true, scaling_ok = true;
  // Layers that do not run on the full-resolution map: global descriptors
  // (ratio 1) and pooled strips (ratio 2).
  const std::map<std::string, std::uint64_t> non_spatial = {{"rgb_cam.conv", 1}, {"ir_cam.conv", 1},
                                                            {"pam.horizontal", 2}, {"pam.vertical", 2},
                                                            {"lcam.reduce", 1}, {"lcam.expand", 1}};
  while (configs < 12) {
    ModuleConfig cfg;
    cfg.batch = 1 + rng.next() % 3;
    cfg.channels = 2 * (1 + rng.next() % 12);
    cfg.height = 2 * (1 + rng.next() % 8);
    cfg.width = 2 * (1 + rng.next() % 8);
    const std::size_t divisors[] = {1, 2, 4, 8};
    cfg.groups = divisors[rng.next() % 4];
    cfg.lcam_ratio = divisors[rng.next() % 4];
    cfg.cam_kernel = 1 + 2 * (rng.next() % 3);
    if (cfg.channels % cfg.groups != 0 || cfg.channels % cfg.lcam_ratio != 0) continue;
    ++configs;
    for (ModuleKind kind : {ModuleKind::asff, ModuleKind::fatm}) {
      const CostReport r = cost_report(cfg, kind);
      std::map<std::string, std::uint64_t> learnable, buffers;
      std::uint64_t total = 0;
      if (kind == ModuleKind::asff) {
        enumerate(make_asff_params(cfg), learnable, buffers, total);
      } else {
        enumerate(make_fatm_params(cfg), learnable, buffers, total);
      }
      counts_ok = counts_ok && total == r.total_params;
      std::uint64_t layer_sum = 0;
      for (const auto& l : r.layers) {
        const auto it = learnable.find(l.name);
        const std::uint64_t expected = it == learnable.end() ? 0 : it->second;
        const auto bt = buffers.find(l.name);
        counts_ok = counts_ok && l.params == expected && l.buffers == (bt == buffers.end() ? 0 : bt->second);
        layer_sum += l.params;
      }
      counts_ok = counts_ok && layer_sum == r.total_params;

      const auto manifest = weight_manifest(cfg, kind);
      const auto archive = init_weights(cfg, kind, configs);
      manifest_ok = manifest_ok && manifest.size() == archive.size();
      for (std::size_t i = 0; manifest_ok && i < manifest.size(); ++i) {
        manifest_ok = manifest[i].name == archive[i].name && manifest[i].shape == archive[i].tensor.shape();
      }

      ModuleConfig big = cfg;
      big.height *= 2;
      big.width *= 2;
      const CostReport r2 = cost_report(big, kind);
      for (std::size_t i = 0; i < r.layers.size(); ++i) {
        const auto it = non_spatial.find(r.layers[i].name);
        const std::uint64_t ratio = it == non_spatial.end() ? 4 : it->second;
        scaling_ok = scaling_ok && r2.layers[i].macs == ratio * r.layers[i].macs;
      }
    }
  }
  info(std::to_string(configs) + " random configs x {asff, fatm}: per-layer and total parameter counts vs allocated tensors: " +
       (counts_ok ? "exact" : "MISMATCH"));
  info(std::string("manifest names/shapes vs init_weights archive: ") + (manifest_ok ? "exact" : "MISMATCH"));
  info(std::string("H,W doubled: full-resolution layers x4, strip layers x2, descriptor layers x1: ") +
       (scaling_ok ? "exact" : "MISMATCH"));
  return {counts_ok && manifest_ok && scaling_ok,
          "cost-model exactness: analytic counts equal enumerated tensors; MAC scaling law exact"};
}

Outcome lightweight_delta() {
  ModuleConfig cfg;
  cfg.channels = 512;
  cfg.height = 20;
  cfg.width = 20;
  const CostReport r = cost_report(cfg, ModuleKind::asff);
  const double params_m = r.params_millions();
  const double gflops = r.gflops();
  std::uint64_t pointwise_2c = 0, pam_params = 0;
  for (const auto& l : r.layers) {
    if (l.name == "dfm.entry" || l.name == "dfm.local_expand" || l.name == "dfm.local_reduce" || l.name == "fm.expand" ||
        l.name == "fm.merge") {
      pointwise_2c += l.params;
    }
    if (l.name == "pam.horizontal" || l.name == "pam.vertical") pam_params += l.params;
  }
  info("C=512 H=W=20: params " + fmt(params_m, 4) + " M, " + fmt(gflops, 4) + " GFLOPs");
  info("of which C<->2C pointwise convs " + fmt(pointwise_2c / 1e6, 4) + " M, PAM C x C convs " +
       fmt(pam_params / 1e6, 4) + " M");
  ModuleConfig wide = cfg;
  wide.channels = 128;
  wide.height = 80;
  wide.width = 80;
  const CostReport w = cost_report(wide, ModuleKind::asff);
  info("for comparison C=128 H=W=80: params " + fmt(w.params_millions(), 4) + " M, " + fmt(w.gflops(), 4) + " GFLOPs");
  const bool params_ok = params_m >= 0.1 && params_m <= 1.0;
  const bool flops_ok = gflops >= 1.0 && gflops <= 6.0;
  return {params_ok && flops_ok, "lightweight delta at C=512 H=W=20: params " + fmt(params_m, 4) + " M (window [0.1, 1.0]) " +
                                     (params_ok ? "in" : "OUT") + ", " + fmt(gflops, 4) + " GFLOPs (window [1, 6]) " +
                                     (flops_ok ? "in" : "OUT")};
}

Outcome toy_training() {
  const auto start = Clock::now();
  const ToyTask task;  // seed 0, 64 samples, C=8, H=W=8
  const ModuleConfig cfg;
  bool diverged = false;
  ToyTrainResult a, b;
  try {
    a = train_toy(task, cfg, 200, 1e-2, 0);
    b = train_toy(task, cfg, 200, 1e-2, 0);
  } catch (const TrainingError& e) {
    diverged = true;
    info(std::string("diverged: ") + e.what());
  }
  const double elapsed = seconds_since(start);
  if (diverged) return {false, "toy training diverged"};
  const double ratio = a.final_loss / a.losses.front();
  const bool deterministic = a.losses == b.losses && encode_archive(to_archive(a.params)) == encode_archive(to_archive(b.params));

  ModuleConfig sized = cfg;
  sized.batch = task.samples;
  sized.channels = task.channels;
  sized.height = task.height;
  sized.width = task.width;
  const ToyTrainResult frozen = train_toy(task, cfg, 5, 0.0, 0);
  const bool frozen_ok =
      encode_archive(to_archive(frozen.params)) == encode_archive(init_weights(sized, ModuleKind::asff, 0)) &&
      std::all_of(frozen.losses.begin(), frozen.losses.end(), [&](double l) { return l == frozen.losses.front(); });

  info("loss " + fmt(a.losses.front(), 5) + " -> " + fmt(a.final_loss, 5) + " (ratio " + fmt(ratio, 4) +
       ", required < " + fmt(kToyLossRatio) + "); epoch 100 loss " + fmt(a.losses[100], 5));
  info(std::string("repeat run identical (trace and weights): ") + (deterministic ? "yes" : "no"));
  info(std::string("lr 0: weights byte-identical to init and constant loss: ") + (frozen_ok ? "yes" : "no"));
  const bool passed = ratio < kToyLossRatio && deterministic && frozen_ok && elapsed < kToyBudgetSeconds;
  return {passed, "toy training: loss ratio " + fmt(ratio, 4) + " after 200 epochs (need < 0.5), deterministic " +
                      (deterministic ? "yes" : "no") + ", lr 0 frozen " + (frozen_ok ? "yes" : "no") + ", " +
                      fmt(elapsed) + " s (budget 300 s)"};
}

const std::filesystem::path kGolden = MMFUSE_GOLDEN_DIR;

template <typename E, typename F>
bool throws_exactly(F&& f) {
  try {
    f();
  } catch (const E& e) {
    return typeid(e) == typeid(E);
  } catch (...) {
    return false;
  }
  return false;
}

int run_cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  return cli_dispatch(args, out, err);
}

Outcome io_golden() {
  bool ok = true;
  const auto note = [&](bool cond, const std::string& what) {
    if (!cond) info("failed: " + what);
    ok = ok && cond;
  };
  for (const char* name : {"one.lasf", "ramp.lasf", "random.lasf"}) {
    const auto bytes = read_file(kGolden / name);
    note(encode_tensor(decode_tensor(bytes)) == bytes, std::string(name) + " roundtrip");
  }
  const auto one = read_file(kGolden / "one.lasf");
  const std::vector<std::uint8_t> payload(one.end() - 4, one.end());
  note(payload == std::vector<std::uint8_t>{0x00, 0x00, 0x80, 0x3f}, "1.0 payload bytes");
  const Tensor ramp = read_tensor(kGolden / "ramp.lasf");
  bool ramp_ok = ramp.shape() == Shape{1, 2, 3, 4};
  for (std::size_t i = 0; ramp_ok && i < ramp.numel(); ++i) ramp_ok = ramp[i] == -1.0f + 0.25f * static_cast<float>(i);
  note(ramp_ok, "ramp.lasf values");

  const auto archive_bytes = read_file(kGolden / "small.lasw");
  const WeightArchive archive = decode_archive(archive_bytes);
  note(encode_archive(archive) == archive_bytes, "small.lasw roundtrip");
  note(archive.size() == 4 && archive[0].name == "conv.weight" && archive[3].name == "modality.\xce\xb1",
       "small.lasw names in file order");

  const std::string tmp = (std::filesystem::temp_directory_path() / "mmfuse_acceptance_out.lasf").string();
  const std::string good = (kGolden / "one.lasf").string();
  struct Bad {
    const char* file;
    bool archive;
    bool version;
  };
  for (const Bad& b : {Bad{"bad_magic.lasf", false, false}, Bad{"truncated.lasf", false, false},
                       Bad{"bad_version.lasf", false, true}, Bad{"bad_dtype.lasf", false, true},
                       Bad{"bad_magic.lasw", true, false}, Bad{"truncated.lasw", true, false},
                       Bad{"duplicate.lasw", true, false}}) {
    const auto path = kGolden / b.file;
    const auto load = [&] { b.archive ? (void)read_archive(path) : (void)read_tensor(path); };
    const bool typed = b.version ? throws_exactly<VersionError>(load) : throws_exactly<FormatError>(load);
    note(typed, std::string(b.file) + (b.version ? " -> version error" : " -> format error"));
    const int code = b.archive ? run_cli({"fuse", "--rgb", good, "--ir", good, "--weights", path.string(), "--out", tmp})
                               : run_cli({"fuse", "--rgb", path.string(), "--ir", good, "--weights", good, "--out", tmp});
    note(code == kExitFormat, std::string(b.file) + " -> CLI exit 2 (got " + std::to_string(code) + ")");
  }
  info("3 tensor + 1 archive fixtures roundtrip; 7 corrupted fixtures checked for error type and CLI exit code");
  return {ok, "I/O golden files: bit-exact roundtrip and specified errors"};
}

}  // namespace

int main(int argc, char** argv) {
  int only = 0;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--criterion") == 0 && i + 1 < argc) only = std::atoi(argv[++i]);
  }
  const std::vector<std::pair<int, std::function<Outcome()>>> criteria = {
      {1, gradient_suite},   {2, residual_identity}, {3, shuffle_algebra},
      {4, gate_ranges},      {5, oracle_equivalence}, {6, cost_exactness},
      {7, lightweight_delta}, {8, toy_training},     {9, io_golden}};
  int failures = 0;
  for (const auto& [id, run] : criteria) {
    if (only != 0 && id != only) continue;
    Outcome o{false, ""};
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    std::cout << (o.passed ? "[PASS]" : "[FAIL]") << " criterion " << id << " " << o.summary << "\n";
    failures += o.passed ? 0 : 1;
  }
  return failures == 0 ? 0 : 1;
}
