#pragma once

#include <cstdint>
#include <string>
#include <utility>

#include "intensivenet/layers.hpp"

namespace inet {

/// Channel-growth parameters shared by dense and intensive blocks.
/// Fusion and transition convolutions emit floor(compression * c_in)
/// channels (at least 1).
struct BlockConfig {
  int growth_rate = 8;
  int layer_count = 8;
  double compression = 0.5;
  ConvKind conv_kind = ConvKind::Separable;
};

void validate(const BlockConfig& cfg);

/// floor(theta * channels), clamped to >= 1.
int compressed_channels(int channels, double compression);

/// input + layer_count * growth_rate.
int dense_block_out_channels(int in_channels, const BlockConfig& cfg);

/// Closed-form channel trace of one intensive block.
struct IntensiveBlockDims {
  int input;
  int fd1;     // after dense block 1
  int fd2;     // after dense block 2
  int fc1;     // fusion conv 1 output
  int fc2;     // concat(fc1, fd1)
  int fc3;     // fusion conv 2 output
  int fc4;     // concat(fc3, input)
  int output;  // after the stride-2 transition conv
};
IntensiveBlockDims intensive_block_dims(int in_channels, const BlockConfig& cfg);

// Dense block: layer i consumes concat(x, out_1, ..., out_{i-1}) and emits
// growth_rate channels through one 3x3 stride-1 same-padding conv unit;
// the block output is concat(x, out_1, ..., out_c).
void init_dense_block(ParamStore& store, const std::string& prefix, int in_channels,
                      const BlockConfig& cfg, std::uint64_t seed);
Var dense_block(Var x, ParamStore& store, const std::string& prefix, const BlockConfig& cfg,
                const Mode& mode);

// Dense fusion block: two chained dense blocks followed by a compression
// conv. Returns (fd1, fc1); both are needed by the downstream fusion.
void init_dense_fusion_block(ParamStore& store, const std::string& prefix, int in_channels,
                             const BlockConfig& cfg, std::uint64_t seed);
std::pair<Var, Var> dense_fusion_block(Var x, ParamStore& store, const std::string& prefix,
                                       const BlockConfig& cfg, const Mode& mode);

// Stride-2 transition conv unit (learnable downsampling; spatial ceil(in/2)).
void init_transition_conv(ParamStore& store, const std::string& prefix, int in_channels,
                          const BlockConfig& cfg, std::uint64_t seed, Dim2 stride = {2, 2});
Var transition_conv(Var x, ParamStore& store, const std::string& prefix,
                    const BlockConfig& cfg, const Mode& mode, Dim2 stride = {2, 2});

// Full intensive block:
//   (fd1, fc1) = dense_fusion_block(x)
//   fc2 = concat(fc1, fd1); fc3 = fusion_conv2(fc2)
//   fc4 = concat(fc3, x);   out = transition_conv(fc4)   [stride 2]
void init_intensive_block(ParamStore& store, const std::string& prefix, int in_channels,
                          const BlockConfig& cfg, std::uint64_t seed);
Var intensive_block(Var x, ParamStore& store, const std::string& prefix,
                    const BlockConfig& cfg, const Mode& mode);

}  // namespace inet
