#include <doctest.h>

#include <algorithm>

#include "mmfuse/asff.hpp"
#include "mmfuse/rng.hpp"
#include "oracle/reference.hpp"
#include "support.hpp"

using namespace mmfuse;
using testing_support::relative_error;
using testing_support::same_values;

namespace {

ModuleConfig config(std::size_t n = 2, std::size_t c = 8, std::size_t hw = 6, std::size_t groups = 4) {
  ModuleConfig cfg;
  cfg.batch = n;
  cfg.channels = c;
  cfg.height = cfg.width = hw;
  cfg.groups = groups;
  return cfg;
}

AsffParamsT<TensorD> random_params(const ModuleConfig& cfg, std::uint64_t seed) {
  return testing_support::random_double_params(init_asff_params(cfg, seed), seed);
}

}  // namespace

TEST_CASE("zero weights annihilate the fused output") {
  const auto cfg = config();
  auto p = make_asff_params(cfg);
  zero_params(p);
  Rng rng(1);
  const Tensor rgb = rng.normal_tensor<float>(cfg.input_shape());
  const Tensor ir = rng.normal_tensor<float>(cfg.input_shape());
  const auto r = asff_stages(rgb, ir, p, cfg.groups);
  CHECK(r.attention == Tensor::zeros(cfg.input_shape()));
  CHECK(r.fused == Tensor::zeros(cfg.input_shape()));
}

TEST_CASE("output shape equals input shape") {
  for (std::size_t c : {2, 4, 8}) {
    for (std::size_t hw : {2, 4, 10}) {
      const auto cfg = config(1, c, hw, c / 2);
      Rng rng(c * 100 + hw);
      const Tensor x = rng.normal_tensor<float>(cfg.input_shape());
      CHECK(asff_forward(x, x, init_asff_params(cfg, 0), cfg.groups).shape() == cfg.input_shape());
    }
  }
  ModuleConfig rect = config(1, 4, 4, 2);
  rect.width = 8;
  Rng rng(3);
  const Tensor x = rng.normal_tensor<float>(rect.input_shape());
  CHECK(asff_forward(x, x, init_asff_params(rect, 0), rect.groups).shape() == rect.input_shape());
}

TEST_CASE("tied modality weights make the module symmetric") {
  const auto cfg = config();
  auto p = init_asff_params(cfg, 5);
  p.ir_cam = p.rgb_cam;
  p.ir_dw = p.rgb_dw;
  Rng rng(6);
  const Tensor a = rng.normal_tensor<float>(cfg.input_shape());
  const Tensor b = rng.normal_tensor<float>(cfg.input_shape());
  CHECK(same_values(asff_forward(a, b, p, cfg.groups), asff_forward(b, a, p, cfg.groups)));
}

TEST_CASE("stages agree with the loop oracle") {
  const auto cfg = config();
  const auto p = random_params(cfg, 8);
  Rng rng(9);
  const TensorD rgb = rng.normal_tensor<double>(cfg.input_shape());
  const TensorD ir = rng.normal_tensor<double>(cfg.input_shape());
  const auto trace = oracle::asff(oracle::Grid(rgb), oracle::Grid(ir), p, cfg.groups);
  const auto r = asff_stages(rgb, ir, p, cfg.groups);
  CHECK(relative_error(r.attention, trace.attention.tensor()) < 1e-12);
  CHECK(relative_error(dfm_forward(r.attention, p.dfm), trace.dfm_out.tensor()) < 1e-12);
  CHECK(relative_error(fm_forward(trace.dr.tensor(), p.fm), trace.fm_out.tensor()) < 1e-12);
  CHECK(relative_error(r.modulation, trace.modulation.tensor()) < 1e-12);
  CHECK(relative_error(r.fused, trace.fused.tensor()) < 1e-12);
}

TEST_CASE("modulation block composes its two residual stages") {
  const auto cfg = config();
  const auto p = random_params(cfg, 10);
  Rng rng(11);
  const TensorD f_a = rng.normal_tensor<double>(cfg.input_shape());
  const TensorD f_dr = elementwise(dfm_forward(f_a, p.dfm), f_a, BinaryOp::add);
  const TensorD f_b = elementwise(fm_forward(f_dr, p.fm), f_dr, BinaryOp::add);
  CHECK(same_values(fmb_forward(f_a, p.dfm, p.fm), f_b));
}

TEST_CASE("shuffle only permutes channels") {
  const auto cfg = config();
  const auto p = init_asff_params(cfg, 12);
  Rng rng(13);
  const Tensor rgb = rng.normal_tensor<float>(cfg.input_shape());
  const Tensor ir = rng.normal_tensor<float>(cfg.input_shape());
  const auto r = asff_stages(rgb, ir, p, cfg.groups);
  auto a = r.modulation.vec(), b = r.fused.vec();
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  CHECK(a == b);
  const auto perm = shuffle_permutation(cfg.channels, cfg.groups);
  for (std::size_t c = 0; c < cfg.channels; ++c) {
    CHECK(r.fused.at(1, c, 2, 3) == r.modulation.at(1, perm[c], 2, 3));
  }
}

TEST_CASE("DFM ignores the variance term on spatially constant features") {
  const auto cfg = config(1, 4, 4, 2);
  auto p = random_params(cfg, 14);
  TensorD f(cfg.input_shape());
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t i = 0; i < 16; ++i) f[c * 16 + i] = 0.3 * static_cast<double>(c) - 0.4;
  const TensorD before = dfm_forward(f, p.dfm);
  p.dfm.modulation.beta = TensorD::full(p.dfm.modulation.beta.shape(), 5.0);
  CHECK(relative_error(dfm_forward(f, p.dfm), before) < 1e-12);
}

TEST_CASE("input validation") {
  const auto cfg = config();
  const auto p = init_asff_params(cfg, 0);
  const Tensor x(cfg.input_shape());

  SUBCASE("modality shapes must match") {
    const Tensor y(Shape{2, 8, 6, 4});
    try {
      asff_forward(x, y, p, cfg.groups);
      FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("(2,8,6,6)") != std::string::npos);
      CHECK(msg.find("(2,8,6,4)") != std::string::npos);
    }
  }
  SUBCASE("odd spatial extent") {
    const auto odd = config(1, 8, 5, 4);
    const Tensor z(odd.input_shape());
    CHECK_THROWS_AS(asff_forward(z, z, init_asff_params(odd, 0), odd.groups), ShapeError);
  }
  SUBCASE("odd channel count") {
    Tape<float> tape;
    const Var v = tape.constant(Tensor(Shape{1, 3, 4, 4}));
    const auto bound = bind_params(tape, p, "", false);
    CHECK_THROWS_AS(asff(tape, v, v, bound, 1), ConfigError);
  }
  SUBCASE("groups must divide channels") {
    CHECK_THROWS_AS(asff_forward(x, x, p, 3), ConfigError);
  }
}

TEST_CASE("FM in train mode reports running statistic updates") {
  const auto cfg = config(4, 4, 4, 2);
  const auto p = init_asff_params(cfg, 15);
  Rng rng(16);
  Tape<float> tape;
  const Var x = tape.constant(rng.normal_tensor<float>(cfg.input_shape()));
  FmBnUpdates<float> upd;
  const Var y = fm(tape, x, bind_params(tape, p.fm, "fm", false), BnMode::train, &upd);
  CHECK(tape.shape(y) == cfg.input_shape());
  CHECK(upd.cbs1.mean.shape() == Shape{1, 2, 1, 1});
  CHECK_FALSE(upd.cbs1.mean == p.fm.cbs1_bn.running_mean);
  CHECK_FALSE(upd.cbs2.var == p.fm.cbs2_bn.running_var);
}
