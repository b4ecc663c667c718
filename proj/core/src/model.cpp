#include "intensivenet/model.hpp"

namespace inet {

void validate(const ModelConfig& cfg) {
  validate(cfg.block);
  if (cfg.input_shape.c < 1) throw ConfigError("model: input channels must be >= 1");
  if (cfg.first_conv_stride != 1 && cfg.first_conv_stride != 2) {
    throw ConfigError("model: first_conv_stride must be 1 or 2");
  }
  if (cfg.first_conv_channels < 1) throw ConfigError("model: first_conv_channels must be >= 1");
  if (cfg.intensive_blocks < 1) throw ConfigError("model: need at least one intensive block");
  if (cfg.task == Task::Classify && cfg.class_count < 2) {
    throw ConfigError("model: class_count must be >= 2");
  }
  if (cfg.task == Task::Sequence && cfg.alphabet_size < 1) {
    throw ConfigError("model: alphabet_size must be >= 1");
  }
  if (cfg.dropout_rate < 0.0 || cfg.dropout_rate >= 1.0) {
    throw ConfigError("model: dropout_rate must lie in [0,1)");
  }
  if (cfg.input_shape.h < 4 || cfg.input_shape.w < 4) {
    throw ConfigError("model: input geometry too small for the stride-2 stages (need >= 4)");
  }
  if (!(cfg.init_damping > 0.0)) {
    throw ConfigError("model: init_damping must be > 0");
  }
}

namespace {

ConvUnitSpec first_conv_spec(const ModelConfig& cfg) {
  ConvUnitSpec s;
  s.kh = s.kw = 5;  // bigger receptive field than the 3x3 used everywhere else
  s.c_in = cfg.input_shape.c;
  s.c_out = cfg.first_conv_channels;
  s.stride = {cfg.first_conv_stride, cfg.first_conv_stride};
  s.pad = Padding::Same;
  s.kind = cfg.block.conv_kind;
  return s;
}

ConvUnitSpec head_spec(const ModelConfig& cfg, const TrunkGeometry& geo) {
  ConvUnitSpec s;
  s.c_in = geo.channels;
  s.stride = {1, 1};
  s.pad = Padding::Valid;
  s.kind = ConvKind::Standard;
  s.with_bn = false;  // logits stay unconstrained
  if (cfg.task == Task::Classify) {
    s.kh = geo.after_blocks.h;
    s.kw = geo.after_blocks.w;
    s.c_out = cfg.class_count;
  } else {
    s.kh = geo.after_blocks.h;  // collapse the full remaining height per column
    s.kw = 1;
    s.c_out = cfg.alphabet_size + 1;
  }
  return s;
}

Dim2 halve_same(Dim2 d) {
  return {(d.h + 1) / 2, (d.w + 1) / 2};
}

}  // namespace

TrunkGeometry trace_geometry(const ModelConfig& cfg) {
  validate(cfg);
  Dim2 hw{cfg.input_shape.h, cfg.input_shape.w};
  if (cfg.first_conv_stride == 2) hw = halve_same(hw);
  TrunkGeometry geo;
  geo.after_first_conv = hw;
  int channels = cfg.first_conv_channels;
  for (int b = 0; b < cfg.intensive_blocks; ++b) {
    hw = halve_same(hw);
    channels = intensive_block_dims(channels, cfg.block).output;
  }
  geo.after_blocks = hw;
  geo.channels = dense_block_out_channels(channels, cfg.block);
  return geo;
}

void init_model(ParamStore& store, const ModelConfig& cfg) {
  const TrunkGeometry geo = trace_geometry(cfg);
  if (geo.after_blocks.h < 1 || geo.after_blocks.w < 1) {
    throw ConfigError("model: spatial extent vanished before the head");
  }
  init_conv_unit(store, "conv1", first_conv_spec(cfg), cfg.seed);
  int channels = cfg.first_conv_channels;
  for (int b = 0; b < cfg.intensive_blocks; ++b) {
    init_intensive_block(store, "block" + std::to_string(b + 1), channels, cfg.block,
                         cfg.seed);
    channels = intensive_block_dims(channels, cfg.block).output;
  }
  init_dense_block(store, "dense5", channels, cfg.block, cfg.seed);
  init_conv_unit(store, "head", head_spec(cfg, geo), cfg.seed);
  if (cfg.init_damping != 1.0) {
    // Only kernels whose unit ends in batch norm: there the loss is invariant
    // to the kernel norm, so the damping changes the optimization trajectory
    // (larger effective steps) without changing the represented function.
    for (auto& [path, entry] : store) {
      const auto slash = path.rfind('/');
      if (slash == std::string::npos) continue;
      const std::string leaf = path.substr(slash + 1);
      if (leaf != "dw" && leaf != "pw" && leaf != "kernel") continue;
      if (!store.contains(path.substr(0, slash) + "/bn/gamma")) continue;
      Tensor& t = entry.value;
      for (std::int64_t i = 0; i < t.size(); ++i) t[i] *= cfg.init_damping;
    }
  }
}

Var model_forward(Var x, ParamStore& store, const ModelConfig& cfg, const Mode& mode) {
  const Shape& s = x.shape();
  if (s.h != cfg.input_shape.h || s.w != cfg.input_shape.w || s.c != cfg.input_shape.c) {
    throw DimensionError("model_forward: input shape " + s.str() +
                         " does not match configured " + cfg.input_shape.str());
  }
  const TrunkGeometry geo = trace_geometry(cfg);
  Var h = conv_unit(x, store, "conv1", first_conv_spec(cfg), mode);
  for (int b = 0; b < cfg.intensive_blocks; ++b) {
    h = intensive_block(h, store, "block" + std::to_string(b + 1), cfg.block, mode);
  }
  h = dense_block(h, store, "dense5", cfg.block, mode);
  h = ag::dropout(h, cfg.dropout_rate, mode);  // placed after the last dense block
  return conv_unit(h, store, "head", head_spec(cfg, geo), mode);
}

Tensor model_logits(const Tensor& x, ParamStore& store, const ModelConfig& cfg) {
  Tape tape;
  Var logits = model_forward(tape.leaf(x), store, cfg, Mode{});
  return logits.value();
}

std::vector<int> predict_classify(const Tensor& x, ParamStore& store, const ModelConfig& cfg) {
  if (cfg.task != Task::Classify) throw ContractError("predict_classify: not a classify model");
  const Tensor logits = model_logits(x, store, cfg);
  const Shape& s = logits.shape();
  std::vector<int> out(s.n);
  for (int i = 0; i < s.n; ++i) {
    int best = 0;
    for (int k = 1; k < s.c; ++k) {
      if (logits.at(i, 0, 0, k) > logits.at(i, 0, 0, best)) best = k;
    }
    out[i] = best;
  }
  return out;
}

std::vector<LabelSequence> predict_sequence(const Tensor& x, ParamStore& store,
                                            const ModelConfig& cfg) {
  if (cfg.task != Task::Sequence) throw ContractError("predict_sequence: not a sequence model");
  const Tensor logits = model_logits(x, store, cfg);
  const Tensor probs = softmax_channels(logits);
  const Shape& s = probs.shape();
  std::vector<LabelSequence> out;
  out.reserve(std::size_t(s.n));
  for (int i = 0; i < s.n; ++i) {
    Matrix frame_probs(s.w, s.c);
    for (int t = 0; t < s.w; ++t) {
      for (int k = 0; k < s.c; ++k) frame_probs.at(t, k) = probs.at(i, 0, t, k);
    }
    out.push_back(greedy_decode(frame_probs));
  }
  return out;
}

std::int64_t count_parameters(const ParamStore& store) {
  std::int64_t total = 0;
  for (const auto& [path, entry] : store) {
    if (entry.learnable) total += entry.value.size();
  }
  return total;
}

}  // namespace inet
