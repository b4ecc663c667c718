#include <doctest.h>

#include <random>

#include "intensivenet/errors.hpp"
#include "intensivenet/model.hpp"
#include "oracles.hpp"

using namespace inet;

namespace {

/// Miniature configs keep unit-test forward passes cheap.
ModelConfig tiny_classify() {
  ModelConfig cfg;
  cfg.task = Task::Classify;
  cfg.input_shape = {1, 8, 8, 1};
  cfg.class_count = 3;
  cfg.block.layer_count = 2;
  cfg.block.growth_rate = 2;
  cfg.first_conv_channels = 4;
  cfg.seed = 13;
  return cfg;
}

ModelConfig tiny_sequence() {
  ModelConfig cfg = tiny_classify();
  cfg.task = Task::Sequence;
  cfg.input_shape = {1, 8, 16, 1};
  cfg.alphabet_size = 2;
  cfg.seed = 14;
  return cfg;
}

/// Spatial trace reference: first conv stride, then one ceil-halving per
/// intensive block.
int trace_width(int w, int first_stride, int blocks) {
  w = (w + first_stride - 1) / first_stride;
  for (int i = 0; i < blocks; ++i) w = (w + 1) / 2;
  return w;
}

}  // namespace

TEST_CASE("MNIST geometry: 28x28 stride-1 trunk ends at 7x7, logits (n,1,1,10)") {
  ModelConfig cfg;  // defaults are the MNIST layout
  TrunkGeometry geo = trace_geometry(cfg);
  CHECK(geo.after_first_conv.h == 28);
  CHECK(geo.after_blocks.h == 7);
  CHECK(geo.after_blocks.w == 7);

  ParamStore store;
  init_model(store, cfg);
  std::mt19937_64 rng(71);
  Tensor x = oracle::random_tensor({2, 28, 28, 1}, rng, 0.0, 1.0);
  Tensor logits = model_logits(x, store, cfg);
  CHECK(logits.shape() == Shape{2, 1, 1, 10});
}

TEST_CASE("sequence geometry: 32x280 stride-2 trunk gives H'=4, 35 frames") {
  ModelConfig cfg;
  cfg.task = Task::Sequence;
  cfg.input_shape = {1, 32, 280, 1};
  cfg.first_conv_stride = 2;
  TrunkGeometry geo = trace_geometry(cfg);
  CHECK(geo.after_first_conv.h == 16);
  CHECK(geo.after_first_conv.w == 140);
  CHECK(geo.after_blocks.h == 4);
  CHECK(geo.after_blocks.w == 35);
}

TEST_CASE("sequence frame count matches the shape-trace oracle over widths") {
  for (int w = 32; w <= 320; w += 8) {
    ModelConfig cfg;
    cfg.task = Task::Sequence;
    cfg.input_shape = {1, 32, w, 1};
    cfg.first_conv_stride = 2;
    CHECK(trace_geometry(cfg).after_blocks.w == trace_width(w, 2, 2));
  }
}

TEST_CASE("tiny sequence model emits (n, 1, W', A+1) logits") {
  ModelConfig cfg = tiny_sequence();
  ParamStore store;
  init_model(store, cfg);
  std::mt19937_64 rng(72);
  Tensor x = oracle::random_tensor({2, 8, 16, 1}, rng, 0.0, 1.0);
  Tensor logits = model_logits(x, store, cfg);
  CHECK(logits.shape() == Shape{2, 1, trace_width(16, 1, 2), cfg.alphabet_size + 1});
}

TEST_CASE("classify softmax sums to 1 per sample") {
  ModelConfig cfg = tiny_classify();
  ParamStore store;
  init_model(store, cfg);
  std::mt19937_64 rng(73);
  Tensor x = oracle::random_tensor({3, 8, 8, 1}, rng, 0.0, 1.0);
  Tensor probs = softmax_channels(model_logits(x, store, cfg));
  for (int n = 0; n < 3; ++n) {
    double sum = 0.0;
    for (int c = 0; c < cfg.class_count; ++c) sum += probs.at(n, 0, 0, c);
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("predict_classify equals lowest-index argmax of the logits") {
  ModelConfig cfg = tiny_classify();
  ParamStore store;
  init_model(store, cfg);
  std::mt19937_64 rng(74);
  Tensor x = oracle::random_tensor({4, 8, 8, 1}, rng, 0.0, 1.0);
  Tensor logits = model_logits(x, store, cfg);
  std::vector<int> got = predict_classify(x, store, cfg);
  REQUIRE(got.size() == 4);
  for (int n = 0; n < 4; ++n) {
    int best = 0;
    for (int c = 1; c < cfg.class_count; ++c)
      if (logits.at(n, 0, 0, c) > logits.at(n, 0, 0, best)) best = c;
    CHECK(got[std::size_t(n)] == best);
  }
}

TEST_CASE("predict_sequence equals greedy decode of the frame posteriors") {
  ModelConfig cfg = tiny_sequence();
  ParamStore store;
  init_model(store, cfg);
  std::mt19937_64 rng(75);
  Tensor x = oracle::random_tensor({2, 8, 16, 1}, rng, 0.0, 1.0);
  Tensor probs = softmax_channels(model_logits(x, store, cfg));
  std::vector<LabelSequence> got = predict_sequence(x, store, cfg);
  REQUIRE(got.size() == 2);
  const int frames = int(probs.shape().w);
  for (int n = 0; n < 2; ++n) {
    Matrix m(frames, cfg.alphabet_size + 1);
    for (int t = 0; t < frames; ++t)
      for (int a = 0; a <= cfg.alphabet_size; ++a) m.at(t, a) = probs.at(n, 0, t, a);
    CHECK(got[std::size_t(n)] == greedy_decode(m));
    for (int label : got[std::size_t(n)]) CHECK(label != kBlank);
  }
}

TEST_CASE("eval forward is deterministic bitwise") {
  ModelConfig cfg = tiny_classify();
  ParamStore store;
  init_model(store, cfg);
  std::mt19937_64 rng(76);
  Tensor x = oracle::random_tensor({2, 8, 8, 1}, rng, 0.0, 1.0);
  Tensor a = model_logits(x, store, cfg);
  Tensor b = model_logits(x, store, cfg);
  REQUIRE(a.shape() == b.shape());
  for (std::int64_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("standard-conv variant has strictly more parameters") {
  ModelConfig sep = tiny_classify();
  ModelConfig std_cfg = sep;
  std_cfg.block.conv_kind = ConvKind::Standard;
  ParamStore a, b;
  init_model(a, sep);
  init_model(b, std_cfg);
  CHECK(count_parameters(b) > count_parameters(a));
}

TEST_CASE("full miniature model passes the finite-difference check") {
  ModelConfig cfg;
  cfg.task = Task::Sequence;
  cfg.input_shape = {1, 8, 16, 1};
  cfg.alphabet_size = 2;
  cfg.block.layer_count = 2;
  cfg.block.growth_rate = 2;
  cfg.first_conv_channels = 2;
  cfg.intensive_blocks = 1;  // keeps tail-layer gradients above FD resolution
  cfg.seed = 15;
  ParamStore store;
  init_model(store, cfg);
  std::mt19937_64 rng(77);
  Tensor x = oracle::random_tensor({2, 8, 16, 1}, rng, 0.0, 1.0);
  const std::vector<LabelSequence> targets{{1, 2}, {2}};
  Mode mode;  // eval
  double err = finite_difference_check(
      [&](Tape& tape, ParamStore& params) {
        Var logits = model_forward(tape.leaf(x), params, cfg, mode);
        return ag::ctc_loss_mean(logits, targets);
      },
      store);
  CHECK(err < 1e-4);
}

TEST_CASE("init_damping scales only kernels of BN-terminated units") {
  ModelConfig plain = tiny_classify();
  ModelConfig damped = tiny_classify();
  damped.init_damping = 0.5;
  ParamStore a, b;
  init_model(a, plain);
  init_model(b, damped);
  REQUIRE(a.size() == b.size());
  int scaled = 0;
  for (const auto& [path, entry] : a) {
    const Tensor& pa = entry.value;
    const Tensor& pb = b.at(path).value;
    const auto slash = path.rfind('/');
    const std::string leaf = path.substr(slash + 1);
    const bool is_kernel = leaf == "dw" || leaf == "pw" || leaf == "kernel";
    const bool has_bn = a.contains(path.substr(0, slash) + "/bn/gamma");
    for (std::int64_t i = 0; i < pa.size(); ++i) {
      if (is_kernel && has_bn) {
        CHECK(pb[i] == 0.5 * pa[i]);
      } else {
        CHECK(pb[i] == pa[i]);  // head kernel, biases, BN params untouched
      }
    }
    if (is_kernel && has_bn) ++scaled;
  }
  CHECK(scaled > 0);
  CHECK_THROWS_AS(
      [] {
        ModelConfig bad = tiny_classify();
        bad.init_damping = 0.0;
        validate(bad);
      }(),
      ConfigError);
}

TEST_CASE("geometry too small for the halvings is rejected") {
  ModelConfig cfg = tiny_classify();
  cfg.input_shape = {1, 3, 3, 1};
  CHECK_THROWS_AS(validate(cfg), ConfigError);
}
