#include "mmfuse/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <iomanip>
#include <ostream>

#include "mmfuse/asff.hpp"
#include "mmfuse/cost_model.hpp"
#include "mmfuse/fatm.hpp"
#include "mmfuse/io.hpp"
#include "mmfuse/module_check.hpp"
#include "mmfuse/toy.hpp"

namespace mmfuse {

namespace {

struct Options {
  std::string module;
  std::string rgb, ir, in, weights, out;
  std::size_t channels = 8, height = 0, width = 0, size = 8, batch = 1, grad_batch = 2, groups = 0, ratio = 0;
  std::size_t cam_kernel = 3, compare_multi = 0, samples = 64;
  std::uint64_t seed = 0;
  double tol = kGradTolerance, step = kFiniteDiffStep, lr = 1e-2;
  int epochs = 200;
  bool halve = false, json = false;
};

std::size_t default_ratio(std::size_t channels) {
  for (std::size_t r : {16, 4}) {
    if (channels % r == 0 && channels >= r) return r;
  }
  return 1;
}

std::size_t default_groups(std::size_t channels, std::size_t preferred) {
  return channels % preferred == 0 ? preferred : 1;
}

ModuleConfig config_from(const Options& o, std::size_t groups_default) {
  ModuleConfig c;
  c.batch = o.batch;
  c.channels = o.channels;
  c.height = o.height;
  c.width = o.width;
  c.groups = o.groups ? o.groups : default_groups(o.channels, groups_default);
  c.lcam_ratio = o.ratio ? o.ratio : default_ratio(o.channels);
  c.cam_kernel = o.cam_kernel;
  c.halve_lcam_gate = o.halve;
  return c;
}

int run_fuse(const Options& o, std::ostream& out) {
  const Tensor rgb = read_tensor(o.rgb);
  const Tensor ir = read_tensor(o.ir);
  check_modalities(rgb.shape(), ir.shape());
  const WeightArchive archive = read_archive(o.weights);
  ModuleConfig cfg = infer_config(archive, ModuleKind::asff, ModuleConfig{});
  if (cfg.channels != rgb.c()) {
    throw ShapeError("weights expect " + std::to_string(cfg.channels) + " channels, inputs have shape " +
                     to_string(rgb.shape()));
  }
  cfg.batch = rgb.n();
  cfg.height = rgb.h();
  cfg.width = rgb.w();
  cfg.groups = o.groups ? o.groups : default_groups(cfg.channels, 4);
  cfg.validate(ModuleKind::asff);
  const AsffParams p = asff_params_from_archive(archive, cfg);
  const Tensor fused = asff_forward(rgb, ir, p, cfg.groups);
  write_tensor(o.out, fused);
  out << "fused " << to_string(fused.shape()) << " -> " << o.out << "\n";
  return kExitOk;
}

int run_fatm(const Options& o, std::ostream& out) {
  const Tensor x = read_tensor(o.in);
  const WeightArchive archive = read_archive(o.weights);
  ModuleConfig cfg = infer_config(archive, ModuleKind::fatm, ModuleConfig{});
  if (cfg.channels != x.c()) {
    throw ShapeError("weights expect " + std::to_string(cfg.channels) + " channels, input has shape " +
                     to_string(x.shape()));
  }
  cfg.batch = x.n();
  cfg.height = x.h();
  cfg.width = x.w();
  cfg.validate(ModuleKind::fatm);
  const FatmParams p = fatm_params_from_archive(archive, cfg);
  const Tensor y = fatm_forward(x, p, o.halve);
  write_tensor(o.out, y);
  out << "fatm " << to_string(y.shape()) << " -> " << o.out << "\n";
  return kExitOk;
}

int run_init(const Options& o, std::ostream& out) {
  const ModuleKind kind = parse_module_kind(o.module);
  Options sized = o;
  sized.height = sized.width = 2;
  const ModuleConfig cfg = config_from(sized, 4);
  cfg.validate(kind);
  const WeightArchive archive = init_weights(cfg, kind, o.seed);
  validate_manifest(archive, weight_manifest(cfg, kind));
  write_archive(o.out, archive);
  out << "wrote " << archive.size() << " tensors (" << module_name(kind) << ", C=" << cfg.channels << ") -> "
      << o.out << "\n";
  return kExitOk;
}

int run_gradcheck(const Options& o, std::ostream& out) {
  const auto& modules = checkable_modules();
  const auto& prims = checkable_primitives();
  GradCheckReport report;
  if (std::find(prims.begin(), prims.end(), o.module) != prims.end()) {
    report = check_primitive_gradients(o.module, o.seed, o.tol, o.step);
  } else if (std::find(modules.begin(), modules.end(), o.module) != modules.end()) {
    Options sized = o;
    sized.batch = o.grad_batch;
    sized.height = sized.width = o.size;
    report = check_module_gradients(o.module, config_from(sized, 2), o.seed, o.tol, o.step);
  } else {
    std::string known;
    for (const auto& m : modules) known += " " + m;
    for (const auto& m : prims) known += " " + m;
    throw ConfigError("unknown gradcheck target '" + o.module + "'; known:" + known);
  }
  out << std::scientific << std::setprecision(3);
  for (const auto& leaf : report.leaves) {
    out << (leaf.passed ? "ok   " : "FAIL ") << leaf.name << " rel_err=" << leaf.relative_error;
    if (leaf.straddling > 0) out << " straddling=" << leaf.straddling << "/" << leaf.elements;
    out << "\n";
  }
  out << (report.passed ? "PASS" : "FAIL") << " worst=" << report.worst << " tol=" << o.tol
      << " straddling=" << report.straddling << "/" << report.elements << "\n";
  return report.passed ? kExitOk : kExitCheck;
}

int run_count(const Options& o, std::ostream& out) {
  const ModuleKind kind = parse_module_kind(o.module);
  const ModuleConfig cfg = config_from(o, 4);
  if (o.compare_multi > 0) {
    if (kind != ModuleKind::asff) throw ConfigError("--compare-multi applies to asff only");
    const FusionComparison cmp = compare_fusion_baselines(cfg, o.compare_multi);
    if (o.json) {
      out << format_cost_json(cmp.single) << format_cost_json(cmp.multi);
    } else {
      out << format_cost_table(cmp.single) << format_cost_table(cmp.multi);
      out << "single_vs_multi params " << cmp.single.total_params << " " << cmp.multi.total_params << "\n";
      out << "single_vs_multi macs " << cmp.single.total_macs << " " << cmp.multi.total_macs << "\n";
    }
    return kExitOk;
  }
  const CostReport r = cost_report(cfg, kind);
  out << (o.json ? format_cost_json(r) : format_cost_table(r));
  return kExitOk;
}

int run_train(const Options& o, std::ostream& out) {
  ToyTask task;
  task.seed = o.seed;
  task.samples = o.samples;
  task.channels = o.channels;
  task.height = task.width = o.size;
  Options sized = o;
  sized.batch = o.samples;
  sized.height = sized.width = o.size;
  const ModuleConfig cfg = config_from(sized, 4);
  cfg.validate(ModuleKind::asff);
  const ToyTrainResult r = train_toy(task, cfg, o.epochs, o.lr, o.seed);
  out << std::setprecision(9);
  for (std::size_t e = 0; e < r.losses.size(); ++e) out << "epoch " << e << " loss " << r.losses[e] << "\n";
  out << "final loss " << r.final_loss << " ratio " << r.final_loss / r.losses.front() << "\n";
  if (!o.out.empty()) write_archive(o.out, to_archive(r.params));
  return kExitOk;
}

}  // namespace

int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multimodal fusion modules: forward passes, weight files, gradient checks and cost accounting",
               "mmfuse"};
  app.require_subcommand(1);
  Options o;

  auto* fuse = app.add_subcommand("fuse", "Fuse an RGB and an IR feature tensor with ASFF");
  fuse->add_option("--rgb", o.rgb, "RGB feature tensor file")->required();
  fuse->add_option("--ir", o.ir, "IR feature tensor file")->required();
  fuse->add_option("--weights", o.weights, "ASFF weight archive")->required();
  fuse->add_option("--groups", o.groups, "Channel shuffle groups (default 4, or 1 if 4 does not divide C)");
  fuse->add_option("--out", o.out, "Output tensor file")->required();

  auto* fatm = app.add_subcommand("fatm", "Apply FATM to a feature tensor");
  fatm->add_option("--in", o.in, "Input tensor file")->required();
  fatm->add_option("--weights", o.weights, "FATM weight archive")->required();
  fatm->add_option("--out", o.out, "Output tensor file")->required();
  fatm->add_flag("--halve-lcam-gate", o.halve, "Scale the LCAM gate into (0,1)");

  auto* init = app.add_subcommand("init-weights", "Write a freshly initialised weight archive");
  init->add_option("--module", o.module, "asff or fatm")->required();
  init->add_option("--channels", o.channels, "Channel count C")->required();
  init->add_option("--seed", o.seed, "Generator seed")->required();
  init->add_option("--out", o.out, "Output archive")->required();
  init->add_option("--groups", o.groups, "Shuffle groups (asff)");
  init->add_option("--ratio", o.ratio, "LCAM reduction ratio (fatm)");
  init->add_option("--cam-kernel", o.cam_kernel, "CAM 1-D kernel taps (asff)");

  auto* grad = app.add_subcommand("gradcheck", "Compare analytic and finite-difference gradients");
  grad->add_option("--module", o.module, "Module, sub-block or primitive name")->required();
  grad->add_option("--channels", o.channels, "Channel count C")->capture_default_str();
  grad->add_option("--size", o.size, "Spatial extent H = W")->capture_default_str();
  grad->add_option("--seed", o.seed, "Generator seed")->required();
  grad->add_option("--tol", o.tol, "Relative max-norm tolerance")->capture_default_str();
  grad->add_option("--step", o.step, "Central-difference step")->capture_default_str();
  grad->add_option("--batch", o.grad_batch, "Batch size")->capture_default_str();
  grad->add_option("--groups", o.groups, "Shuffle groups (default 2)");
  grad->add_option("--ratio", o.ratio, "LCAM reduction ratio");
  grad->add_flag("--halve-lcam-gate", o.halve, "Scale the LCAM gate into (0,1)");

  auto* count = app.add_subcommand("count", "Report parameters and MACs per layer");
  count->add_option("--module", o.module, "asff or fatm")->required();
  count->add_option("--channels", o.channels, "Channel count C")->required();
  count->add_option("--height", o.height, "Input height")->required();
  count->add_option("--width", o.width, "Input width")->required();
  count->add_option("--batch", o.batch, "Batch size")->capture_default_str();
  count->add_option("--groups", o.groups, "Shuffle groups (asff)");
  count->add_option("--ratio", o.ratio, "LCAM reduction ratio (fatm)");
  count->add_option("--cam-kernel", o.cam_kernel, "CAM 1-D kernel taps (asff)");
  count->add_option("--compare-multi", o.compare_multi, "Also count one ASFF unit per scale over N scales");
  count->add_flag("--json", o.json, "Emit JSON instead of a table");

  auto* train = app.add_subcommand("train-toy", "Train ASFF on the synthetic max-of-modalities task");
  train->add_option("--channels", o.channels, "Channel count C")->capture_default_str();
  train->add_option("--size", o.size, "Spatial extent H = W")->capture_default_str();
  train->add_option("--epochs", o.epochs, "Gradient descent epochs")->capture_default_str();
  train->add_option("--lr", o.lr, "Learning rate")->capture_default_str();
  train->add_option("--seed", o.seed, "Generator seed")->required();
  train->add_option("--samples", o.samples, "Synthetic sample count")->capture_default_str();
  train->add_option("--groups", o.groups, "Shuffle groups (default 4, or 1 if 4 does not divide C)");
  train->add_option("--out", o.out, "Trained weight archive");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    const auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return kExitUsage;
  }

  try {
    if (fuse->parsed()) return run_fuse(o, out);
    if (fatm->parsed()) return run_fatm(o, out);
    if (init->parsed()) return run_init(o, out);
    if (grad->parsed()) return run_gradcheck(o, out);
    if (count->parsed()) return run_count(o, out);
    if (train->parsed()) return run_train(o, out);
  } catch (const TrainingError& e) {
    err << "error: " << e.what() << "\n";
    return kExitCheck;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitFormat;
  }
  err << app.help();
  return kExitUsage;
}

}  // namespace mmfuse
