#include <doctest.h>

#include <random>

#include "intensivenet/autograd.hpp"
#include "intensivenet/errors.hpp"
#include "intensivenet/layers.hpp"
#include "oracles.hpp"

using namespace inet;

TEST_CASE("sum gradient is all ones") {
  ParamStore store;
  store.emplace("p", Tensor(Shape{1, 2, 3, 2}, 0.5));
  Tape tape;
  Var loss = ag::sum(tape.param(store, "p"));
  GradientMap grads = tape.backward(loss, store);
  REQUIRE(grads.count("p") == 1);
  const Tensor& g = grads.at("p");
  for (std::int64_t i = 0; i < g.size(); ++i) CHECK(g[i] == 1.0);
}

TEST_CASE("sum(p*p) gradient is 2p") {
  ParamStore store;
  store.emplace("p", Tensor(Shape{1, 1, 1, 2}, {1.0, -2.0}));
  Tape tape;
  Var p = tape.param(store, "p");
  GradientMap grads = tape.backward(ag::sum(ag::mul(p, p)), store);
  CHECK(grads.at("p")[0] == doctest::Approx(2.0));
  CHECK(grads.at("p")[1] == doctest::Approx(-4.0));
}

TEST_CASE("concat gradient routes each band to its source") {
  ParamStore store;
  store.emplace("a", Tensor(Shape{1, 1, 1, 2}, 1.0));
  store.emplace("b", Tensor(Shape{1, 1, 1, 3}, 1.0));
  // One-hot upstream: select exactly one output channel via a mask.
  for (int hot = 0; hot < 5; ++hot) {
    Tape tape;
    Var cat = ag::concat_channels({tape.param(store, "a"), tape.param(store, "b")});
    Tensor mask(Shape{1, 1, 1, 5}, 0.0);
    mask[hot] = 1.0;
    GradientMap grads = tape.backward(ag::sum(ag::mul(cat, tape.leaf(mask))), store);
    for (int c = 0; c < 2; ++c) CHECK(grads.at("a")[c] == (hot == c ? 1.0 : 0.0));
    for (int c = 0; c < 3; ++c) CHECK(grads.at("b")[c] == (hot == 2 + c ? 1.0 : 0.0));
  }
}

TEST_CASE("a variable consumed twice accumulates both paths") {
  ParamStore store;
  store.emplace("p", Tensor(Shape{1, 1, 1, 1}, {3.0}));
  Tape tape;
  Var p = tape.param(store, "p");
  // loss = p + p*p -> dloss/dp = 1 + 2p = 7
  GradientMap grads = tape.backward(ag::sum(ag::add(p, ag::mul(p, p))), store);
  CHECK(grads.at("p")[0] == doctest::Approx(7.0));
}

TEST_CASE("unreachable parameters receive zero gradients") {
  ParamStore store;
  store.emplace("used", Tensor(Shape{1, 1, 1, 1}, {1.0}));
  store.emplace("unused", Tensor(Shape{1, 1, 1, 2}, {1.0, 1.0}));
  Tape tape;
  GradientMap grads = tape.backward(ag::sum(tape.param(store, "used")), store);
  REQUIRE(grads.count("unused") == 1);
  CHECK(grads.at("unused")[0] == 0.0);
  CHECK(grads.at("unused")[1] == 0.0);
}

TEST_CASE("backward rejects non-scalar losses and consumed tapes") {
  ParamStore store;
  store.emplace("p", Tensor(Shape{1, 1, 1, 2}, 1.0));
  {
    Tape tape;
    Var p = tape.param(store, "p");
    CHECK_THROWS_AS(tape.backward(p, store), ContractError);
  }
  {
    Tape tape;
    Var loss = ag::sum(tape.param(store, "p"));
    (void)tape.backward(loss, store);
    CHECK_THROWS_AS(tape.backward(loss, store), StateError);
  }
}

TEST_CASE("finite differences: linear model below 1e-9") {
  std::mt19937_64 rng(11);
  ParamStore store;
  store.emplace("w", oracle::random_tensor({1, 1, 1, 4}, rng));
  Tensor x = oracle::random_tensor({1, 1, 1, 4}, rng);
  double err = finite_difference_check(
      [&x](Tape& tape, ParamStore& params) {
        return ag::sum(ag::mul(tape.param(params, "w"), tape.leaf(x)));
      },
      store);
  CHECK(err < 1e-9);
}

TEST_CASE("finite differences: lone separable conv unit below 1e-4") {
  std::mt19937_64 rng(12);
  ConvUnitSpec spec;
  spec.c_in = 3;
  spec.c_out = 2;
  ParamStore store;
  init_conv_unit(store, "unit", spec, 5);
  Tensor x = oracle::random_tensor({2, 3, 3, 3}, rng);
  Mode mode;  // eval: BN fixed, no dropout
  double err = finite_difference_check(
      [&](Tape& tape, ParamStore& params) {
        Var y = conv_unit(tape.leaf(x), params, "unit", spec, mode);
        return ag::sum(y);
      },
      store);
  CHECK(err < 1e-4);
}

TEST_CASE("finite differences: zero-parameter model returns 0") {
  ParamStore store;
  Tensor x(Shape{1, 1, 1, 1}, {2.0});
  double err = finite_difference_check(
      [&x](Tape& tape, ParamStore&) { return ag::sum(tape.leaf(x)); }, store);
  CHECK(err == 0.0);
}

TEST_CASE("backward through relu of positives is the identity on gradients") {
  ParamStore store;
  store.emplace("p", Tensor(Shape{1, 1, 1, 2}, {-1.0, 2.0}));
  Tape tape;
  Var y = ag::relu(tape.param(store, "p"));
  Tensor up(Shape{1, 1, 1, 2}, {5.0, 5.0});
  GradientMap grads = tape.backward(ag::sum(ag::mul(y, tape.leaf(up))), store);
  CHECK(grads.at("p")[0] == 0.0);
  CHECK(grads.at("p")[1] == doctest::Approx(5.0));
}
