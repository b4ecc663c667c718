#include "intensivenet/blocks.hpp"

#include <cmath>

namespace inet {

void validate(const BlockConfig& cfg) {
  if (cfg.growth_rate < 1) throw ConfigError("BlockConfig: growth_rate must be >= 1");
  if (cfg.layer_count < 1) throw ConfigError("BlockConfig: layer_count must be >= 1");
  if (!(cfg.compression > 0.0 && cfg.compression <= 1.0)) {
    throw ConfigError("BlockConfig: compression must lie in (0,1]");
  }
}

int compressed_channels(int channels, double compression) {
  return std::max(1, int(std::floor(compression * channels)));
}

int dense_block_out_channels(int in_channels, const BlockConfig& cfg) {
  return in_channels + cfg.layer_count * cfg.growth_rate;
}

IntensiveBlockDims intensive_block_dims(int in_channels, const BlockConfig& cfg) {
  IntensiveBlockDims d{};
  d.input = in_channels;
  d.fd1 = dense_block_out_channels(d.input, cfg);
  d.fd2 = dense_block_out_channels(d.fd1, cfg);
  d.fc1 = compressed_channels(d.fd2, cfg.compression);
  d.fc2 = d.fc1 + d.fd1;
  d.fc3 = compressed_channels(d.fc2, cfg.compression);
  d.fc4 = d.fc3 + d.input;
  d.output = compressed_channels(d.fc4, cfg.compression);
  return d;
}

namespace {

ConvUnitSpec dense_layer_spec(int c_in, const BlockConfig& cfg) {
  ConvUnitSpec s;
  s.kh = s.kw = 3;
  s.c_in = c_in;
  s.c_out = cfg.growth_rate;
  s.stride = {1, 1};
  s.pad = Padding::Same;
  s.kind = cfg.conv_kind;
  return s;
}

ConvUnitSpec fusion_spec(int c_in, const BlockConfig& cfg) {
  ConvUnitSpec s;
  s.kh = s.kw = 3;
  s.c_in = c_in;
  s.c_out = compressed_channels(c_in, cfg.compression);
  s.stride = {1, 1};
  s.pad = Padding::Same;
  s.kind = cfg.conv_kind;
  return s;
}

void check_channels(const char* what, const Var& x, int expected) {
  if (x.shape().c != expected) {
    throw DimensionError(std::string(what) + ": input has " +
                         std::to_string(x.shape().c) + " channels, expected " +
                         std::to_string(expected));
  }
}

}  // namespace

void init_dense_block(ParamStore& store, const std::string& prefix, int in_channels,
                      const BlockConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  store.emplace(prefix + "/in_channels", Tensor({1, 1, 1, 1}, double(in_channels)), false,
                false);
  for (int i = 0; i < cfg.layer_count; ++i) {
    const int c_in = in_channels + i * cfg.growth_rate;
    init_conv_unit(store, prefix + "/layer" + std::to_string(i), dense_layer_spec(c_in, cfg),
                   seed);
  }
}

Var dense_block(Var x, ParamStore& store, const std::string& prefix, const BlockConfig& cfg,
                const Mode& mode) {
  const int in_channels = int(store.at(prefix + "/in_channels").value[0]);
  check_channels("dense_block", x, in_channels);
  std::vector<Var> features{x};
  for (int i = 0; i < cfg.layer_count; ++i) {
    Var input = features.size() == 1 ? features[0] : ag::concat_channels(features);
    const int c_in = in_channels + i * cfg.growth_rate;
    Var out = conv_unit(input, store, prefix + "/layer" + std::to_string(i),
                        dense_layer_spec(c_in, cfg), mode);
    features.push_back(out);
  }
  return ag::concat_channels(features);
}

void init_dense_fusion_block(ParamStore& store, const std::string& prefix, int in_channels,
                             const BlockConfig& cfg, std::uint64_t seed) {
  init_dense_block(store, prefix + "/dense1", in_channels, cfg, seed);
  const int fd1 = dense_block_out_channels(in_channels, cfg);
  init_dense_block(store, prefix + "/dense2", fd1, cfg, seed);
  const int fd2 = dense_block_out_channels(fd1, cfg);
  init_conv_unit(store, prefix + "/fusion1", fusion_spec(fd2, cfg), seed);
}

std::pair<Var, Var> dense_fusion_block(Var x, ParamStore& store, const std::string& prefix,
                                       const BlockConfig& cfg, const Mode& mode) {
  Var fd1 = dense_block(x, store, prefix + "/dense1", cfg, mode);
  Var fd2 = dense_block(fd1, store, prefix + "/dense2", cfg, mode);
  Var fc1 = conv_unit(fd2, store, prefix + "/fusion1", fusion_spec(fd2.shape().c, cfg), mode);
  return {fd1, fc1};
}

void init_transition_conv(ParamStore& store, const std::string& prefix, int in_channels,
                          const BlockConfig& cfg, std::uint64_t seed, Dim2 stride) {
  if (stride.h != 2 || stride.w != 2) {
    throw ConfigError("transition_conv: stride must be 2");
  }
  ConvUnitSpec s = fusion_spec(in_channels, cfg);
  s.stride = stride;
  init_conv_unit(store, prefix, s, seed);
}

Var transition_conv(Var x, ParamStore& store, const std::string& prefix,
                    const BlockConfig& cfg, const Mode& mode, Dim2 stride) {
  if (stride.h != 2 || stride.w != 2) {
    throw ConfigError("transition_conv: stride must be 2");
  }
  ConvUnitSpec s = fusion_spec(x.shape().c, cfg);
  s.stride = stride;
  return conv_unit(x, store, prefix, s, mode);
}

void init_intensive_block(ParamStore& store, const std::string& prefix, int in_channels,
                          const BlockConfig& cfg, std::uint64_t seed) {
  init_dense_fusion_block(store, prefix, in_channels, cfg, seed);
  const IntensiveBlockDims d = intensive_block_dims(in_channels, cfg);
  init_conv_unit(store, prefix + "/fusion2", fusion_spec(d.fc2, cfg), seed);
  init_transition_conv(store, prefix + "/transition", d.fc4, cfg, seed);
}

Var intensive_block(Var x, ParamStore& store, const std::string& prefix,
                    const BlockConfig& cfg, const Mode& mode) {
  auto [fd1, fc1] = dense_fusion_block(x, store, prefix, cfg, mode);
  // Concat operand order follows the block formula: (fc1, fd1), then (fc3, x).
  Var fc2 = ag::concat_channels({fc1, fd1});
  Var fc3 = conv_unit(fc2, store, prefix + "/fusion2", fusion_spec(fc2.shape().c, cfg), mode);
  Var fc4 = ag::concat_channels({fc3, x});
  return transition_conv(fc4, store, prefix + "/transition", cfg, mode);
}

}  // namespace inet
