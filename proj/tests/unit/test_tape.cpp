#include <doctest.h>

#include <algorithm>

#include "mmfuse/asff.hpp"
#include "mmfuse/rng.hpp"
#include "mmfuse/tape.hpp"
#include "support.hpp"

using namespace mmfuse;

TEST_CASE("addition routes the seed to both operands") {
  Tape<double> tape;
  const Var a = tape.input("a", TensorD(Shape{1, 1, 1, 2}, {1, 2}));
  const Var b = tape.input("b", TensorD(Shape{1, 1, 1, 2}, {3, 4}));
  const Var y = tape.add(a, b);
  const TensorD seed(Shape{1, 1, 1, 2}, {0.5, -2});
  const auto g = tape.backward(y, seed);
  CHECK(g.at("a") == seed);
  CHECK(g.at("b") == seed);
}

TEST_CASE("sigmoid at zero has slope one quarter") {
  Tape<double> tape;
  const Var x = tape.input("x", TensorD::zeros(Shape{1, 2, 1, 1}));
  const Var y = tape.sum(tape.activation(x, ActivationKind::sigmoid));
  const auto g = tape.backward(y, TensorD::ones(Shape{}));
  CHECK(g.at("x").vec() == std::vector<double>{0.25, 0.25});
}

TEST_CASE("product rule on a shared operand") {
  Tape<double> tape;
  const Var x = tape.input("x", TensorD(Shape{}, {3.0}));
  const Var y = tape.mul(x, x);
  CHECK(tape.backward(y, TensorD::ones(Shape{})).at("x")[0] == 6.0);
}

TEST_CASE("broadcast gradients are reduced to the operand shape") {
  Tape<double> tape;
  const Var x = tape.input("x", TensorD::ones(Shape{2, 3, 2, 2}));
  const Var g = tape.input("g", TensorD::full(Shape{1, 3, 1, 1}, 2.0));
  const Var y = tape.mean(tape.mul(x, g));
  const auto grads = tape.backward(y, TensorD::ones(Shape{}));
  CHECK(grads.at("g").shape() == Shape{1, 3, 1, 1});
  CHECK(grads.at("g")[0] == doctest::Approx(8.0 / 24.0));
  CHECK(grads.at("x")[0] == doctest::Approx(2.0 / 24.0));
}

TEST_CASE("backward visits nodes in reverse recording order") {
  Tape<double> tape;
  const Var x = tape.input("x", TensorD::ones(Shape{}));
  const Var a = tape.activation(x, ActivationKind::silu);
  const Var b = tape.mul(a, x);
  const Var c = tape.sum(b);
  tape.backward(c, TensorD::ones(Shape{}));
  const auto& order = tape.last_backward_order();
  CHECK(std::is_sorted(order.rbegin(), order.rend()));
  CHECK(order.front() == c.id);
}

TEST_CASE("inputs that do not reach the output get zero gradients") {
  Tape<double> tape;
  const Var x = tape.input("x", TensorD::ones(Shape{1, 2, 1, 1}));
  tape.input("unused", TensorD::ones(Shape{1, 3, 1, 1}));
  const auto g = tape.backward(tape.sum(x), TensorD::ones(Shape{}));
  CHECK(g.at("unused") == TensorD::zeros(Shape{1, 3, 1, 1}));
}

TEST_CASE("tape misuse is reported") {
  Tape<double> tape;
  const Var x = tape.input("x", TensorD::ones(Shape{1, 2, 1, 1}));
  CHECK_THROWS_AS(tape.input("x", TensorD::ones(Shape{})), InternalError);
  CHECK_THROWS_AS(tape.backward(x, TensorD::ones(Shape{})), ShapeError);
  CHECK_THROWS_AS(tape.add(x, Var{42}), InternalError);
}

TEST_CASE("replay of a full module reproduces every node bitwise") {
  ModuleConfig cfg;
  cfg.channels = 4;
  cfg.height = cfg.width = 4;
  cfg.groups = 2;
  const auto p = testing_support::random_double_params(init_asff_params(cfg, 3), 3);
  Rng rng(5);
  Tape<double> tape;
  const Var rgb = tape.input("rgb", rng.normal_tensor<double>(cfg.input_shape()));
  const Var ir = tape.input("ir", rng.normal_tensor<double>(cfg.input_shape()));
  const auto stages = asff(tape, rgb, ir, bind_params(tape, p, "", true), cfg.groups);
  CHECK(tape.shape(stages.shuffled) == cfg.input_shape());
  CHECK_NOTHROW(tape.verify_replay());
}

TEST_CASE("branch signature tracks ReLU regions and max-pool winners") {
  const auto signature = [](double a, double b) {
    Tape<double> tape;
    const Var x = tape.input("x", TensorD(Shape{1, 1, 1, 2}, {a, b}));
    tape.adaptive_pool(tape.activation(x, ActivationKind::relu), 1, 1, PoolMode::max);
    return tape.branch_signature();
  };
  CHECK(signature(1, 2) == signature(1.5, 2.5));
  CHECK(signature(1, 2) != signature(-1, 2));
  CHECK(signature(1, 2) != signature(3, 2));
}

TEST_CASE("float and double tapes agree on module gradients") {
  ModuleConfig cfg;
  cfg.channels = 4;
  cfg.height = cfg.width = 4;
  cfg.groups = 2;
  const AsffParams pf = init_asff_params(cfg, 11);
  const auto pd = cast_params<AsffParamsT, double>(pf);
  Rng rng(2);
  const Tensor rgb = rng.normal_tensor<float>(cfg.input_shape());
  const Tensor ir = rng.normal_tensor<float>(cfg.input_shape());

  Tape<float> tf;
  const auto of = asff(tf, tf.input("rgb", rgb), tf.input("ir", ir), bind_params(tf, pf, "", true), cfg.groups);
  const auto gf = tf.backward(tf.sum(of.shuffled), Tensor::ones(Shape{}));

  Tape<double> td;
  const auto od = asff(td, td.input("rgb", rgb.cast<double>()), td.input("ir", ir.cast<double>()),
                       bind_params(td, pd, "", true), cfg.groups);
  const auto gd = td.backward(td.sum(od.shuffled), TensorD::ones(Shape{}));

  REQUIRE(gf.size() == gd.size());
  for (const auto& [name, g] : gd) CHECK(testing_support::relative_error(gf.at(name), g) < 1e-4);
}
