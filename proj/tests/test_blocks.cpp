#include <doctest.h>

#include <random>

#include "intensivenet/blocks.hpp"
#include "intensivenet/errors.hpp"
#include "oracles.hpp"

using namespace inet;

TEST_CASE("dense block channel arithmetic: input + c*g across a grid") {
  for (int layers : {1, 2, 4, 8})
    for (int growth : {1, 3, 8})
      for (int in : {1, 4, 16}) {
        BlockConfig cfg;
        cfg.layer_count = layers;
        cfg.growth_rate = growth;
        CHECK(dense_block_out_channels(in, cfg) == in + layers * growth);
      }
}

TEST_CASE("(8,8) dense block adds exactly 64 channels for widths 3, 16, 64") {
  BlockConfig cfg;  // defaults are (c,g) = (8,8)
  std::mt19937_64 rng(41);
  for (int in : {3, 16, 64}) {
    CHECK(dense_block_out_channels(in, cfg) == in + 64);
    ParamStore store;
    init_dense_block(store, "db", in, cfg, 2);
    Tape tape;
    Tensor x = oracle::random_tensor({1, 3, 3, in}, rng);
    Var y = dense_block(tape.leaf(x), store, "db", cfg, Mode{});
    CHECK(y.shape() == Shape{1, 3, 3, in + 64});
  }
}

TEST_CASE("c=2, g=3, input 4: output 10 channels, layer 2 consumes 7") {
  BlockConfig cfg;
  cfg.layer_count = 2;
  cfg.growth_rate = 3;
  CHECK(dense_block_out_channels(4, cfg) == 10);
  ParamStore store;
  init_dense_block(store, "db", 4, cfg, 3);
  // Layer 2's depthwise kernel spans concat(x, out1) = 4 + 3 = 7 channels.
  CHECK(store.at("db/layer1/dw").value.shape().w == 7);
  std::mt19937_64 rng(42);
  Tape tape;
  Var y = dense_block(tape.leaf(oracle::random_tensor({1, 2, 2, 4}, rng)), store, "db", cfg,
                      Mode{});
  CHECK(y.shape().c == 10);
}

TEST_CASE("dense block output's first band is the input, bitwise") {
  BlockConfig cfg;
  cfg.layer_count = 2;
  cfg.growth_rate = 2;
  ParamStore store;
  init_dense_block(store, "db", 3, cfg, 4);
  std::mt19937_64 rng(43);
  Tensor x = oracle::random_tensor({1, 3, 3, 3}, rng);
  Tape tape;
  Tensor y = dense_block(tape.leaf(x), store, "db", cfg, Mode{}).value();
  for (int h = 0; h < 3; ++h)
    for (int w = 0; w < 3; ++w)
      for (int c = 0; c < 3; ++c) CHECK(y.at(0, h, w, c) == x.at(0, h, w, c));
}

TEST_CASE("compression: floor(theta*c) with a floor of 1; theta=1 is exact") {
  CHECK(compressed_channels(144, 0.5) == 72);
  CHECK(compressed_channels(145, 0.5) == 72);
  CHECK(compressed_channels(1, 0.5) == 1);
  CHECK(compressed_channels(144, 1.0) == 144);
}

TEST_CASE("intensive block channel trace: 16 in, (8,8), theta 0.5") {
  BlockConfig cfg;
  IntensiveBlockDims d = intensive_block_dims(16, cfg);
  CHECK(d.fd1 == 80);
  CHECK(d.fd2 == 144);
  CHECK(d.fc1 == 72);
  CHECK(d.fc2 == 152);
  CHECK(d.fc3 == 76);
  CHECK(d.fc4 == 92);
  CHECK(d.output == 46);
}

TEST_CASE("intensive block trace matches the closed-form theta computation") {
  for (int in : {3, 16, 64})
    for (double theta : {0.25, 0.5, 1.0}) {
      BlockConfig cfg;
      cfg.layer_count = 4;
      cfg.growth_rate = 6;
      cfg.compression = theta;
      IntensiveBlockDims d = intensive_block_dims(in, cfg);
      const int fd1 = in + 24;
      const int fd2 = fd1 + 24;
      const int fc1 = std::max(1, int(theta * fd2));
      const int fc2 = fc1 + fd1;
      const int fc3 = std::max(1, int(theta * fc2));
      const int fc4 = fc3 + in;
      CHECK(d.fd1 == fd1);
      CHECK(d.fd2 == fd2);
      CHECK(d.fc1 == fc1);
      CHECK(d.fc2 == fc2);
      CHECK(d.fc3 == fc3);
      CHECK(d.fc4 == fc4);
      CHECK(d.output == std::max(1, int(theta * fc4)));
    }
}

TEST_CASE("dense fusion block emits (fd1, fc1) with the traced widths") {
  BlockConfig cfg;
  cfg.layer_count = 2;
  cfg.growth_rate = 2;
  ParamStore store;
  init_dense_fusion_block(store, "dfb", 4, cfg, 5);
  std::mt19937_64 rng(44);
  Tape tape;
  auto [fd1, fc1] =
      dense_fusion_block(tape.leaf(oracle::random_tensor({1, 4, 4, 4}, rng)), store, "dfb",
                         cfg, Mode{});
  CHECK(fd1.shape() == Shape{1, 4, 4, 8});            // 4 + 2*2
  CHECK(fc1.shape() == Shape{1, 4, 4, 6});            // floor(0.5 * 12)
}

TEST_CASE("theta=1 fusion conv keeps the fd2 width") {
  BlockConfig cfg;
  cfg.layer_count = 1;
  cfg.growth_rate = 2;
  cfg.compression = 1.0;
  ParamStore store;
  init_dense_fusion_block(store, "dfb", 3, cfg, 6);
  std::mt19937_64 rng(45);
  Tape tape;
  auto [fd1, fc1] =
      dense_fusion_block(tape.leaf(oracle::random_tensor({1, 3, 3, 3}, rng)), store, "dfb",
                         cfg, Mode{});
  CHECK(fd1.shape().c == 5);
  CHECK(fc1.shape().c == 7);  // == fd2
}

TEST_CASE("transition conv halves spatial dims with ceil") {
  BlockConfig cfg;
  cfg.layer_count = 1;
  cfg.growth_rate = 1;
  std::mt19937_64 rng(46);
  for (int in : {4, 5}) {
    ParamStore store;
    init_transition_conv(store, "t", 3, cfg, 7);
    Tape tape;
    Var y = transition_conv(tape.leaf(oracle::random_tensor({1, in, in, 3}, rng)), store, "t",
                            cfg, Mode{});
    CHECK(y.shape().h == (in + 1) / 2);
    CHECK(y.shape().w == (in + 1) / 2);
  }
}

TEST_CASE("intensive block halves spatial dims and matches its trace") {
  BlockConfig cfg;
  cfg.layer_count = 2;
  cfg.growth_rate = 2;
  ParamStore store;
  init_intensive_block(store, "ib", 4, cfg, 8);
  std::mt19937_64 rng(47);
  Tensor x = oracle::random_tensor({1, 32, 10, 4}, rng);
  Tape tape;
  Var y = intensive_block(tape.leaf(x), store, "ib", cfg, Mode{});
  IntensiveBlockDims d = intensive_block_dims(4, cfg);
  CHECK(y.shape() == Shape{1, 16, 5, d.output});

  // Two chained blocks: 32 rows -> 8.
  ParamStore store2;
  init_intensive_block(store2, "ib2", d.output, cfg, 9);
  Tape tape2;
  Var y1 = intensive_block(tape2.leaf(x), store, "ib", cfg, Mode{});
  Var y2 = intensive_block(y1, store2, "ib2", cfg, Mode{});
  CHECK(y2.shape().h == 8);
}

TEST_CASE("intensive block is differentiable end to end (6x6x4, c=g=2)") {
  BlockConfig cfg;
  cfg.layer_count = 2;
  cfg.growth_rate = 2;
  ParamStore store;
  init_intensive_block(store, "ib", 4, cfg, 10);
  std::mt19937_64 rng(48);
  Tensor x = oracle::random_tensor({1, 6, 6, 4}, rng);
  Tensor w;
  Mode mode;  // eval: BN fixed for the finite-difference precondition
  double err = finite_difference_check(
      [&](Tape& tape, ParamStore& params) {
        Var y = intensive_block(tape.leaf(x), params, "ib", cfg, mode);
        if (w.size() == 1) w = oracle::random_tensor(y.shape(), rng);
        return ag::sum(ag::mul(y, tape.leaf(w)));
      },
      store);
  CHECK(err < 1e-4);
}

TEST_CASE("transition conv with a non-2 stride is rejected") {
  BlockConfig cfg;
  ParamStore store;
  CHECK_THROWS_AS(init_transition_conv(store, "t", 3, cfg, 1, Dim2{1, 1}), ConfigError);
}

TEST_CASE("block config validation") {
  BlockConfig bad;
  bad.growth_rate = 0;
  CHECK_THROWS_AS(validate(bad), ConfigError);
  bad = BlockConfig{};
  bad.compression = 0.0;
  CHECK_THROWS_AS(validate(bad), ConfigError);
  bad.compression = 1.5;
  CHECK_THROWS_AS(validate(bad), ConfigError);
}
