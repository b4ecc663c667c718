#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "intensivenet/blocks.hpp"
#include "intensivenet/ctc.hpp"

namespace inet {

enum class Task { Classify, Sequence };

/// Full-network configuration: a 5x5 first conv unit, a chain of intensive
/// blocks (each halving the spatial extent), one trailing dense block,
/// dropout, and a task head.
struct ModelConfig {
  Task task = Task::Classify;
  Shape input_shape{1, 28, 28, 1};  // n is ignored
  int class_count = 10;             // classify head width
  int alphabet_size = 10;           // sequence head emits alphabet_size + 1
  BlockConfig block;
  int first_conv_channels = 16;
  int first_conv_stride = 1;  // 1 or 2
  double dropout_rate = 0.0;
  std::uint64_t seed = 1;
  int intensive_blocks = 2;  // depth-extension knob; reference layout is 2
  // Init-norm multiplier for kernels inside BN-terminated units. Those units
  // are scale-invariant in their kernels, so shrinking the init norm raises
  // the effective SGD step without touching the learning-rate schedule —
  // useful for short training budgets. 1.0 = plain He init.
  double init_damping = 1.0;
};

void validate(const ModelConfig& cfg);

/// Spatial trace through the trunk (first conv + intensive blocks).
struct TrunkGeometry {
  Dim2 after_first_conv;
  Dim2 after_blocks;  // head input extent; frames = after_blocks.w for sequence
  int channels;       // head input channels
};
TrunkGeometry trace_geometry(const ModelConfig& cfg);

void init_model(ParamStore& store, const ModelConfig& cfg);

/// Taped forward to logits: (n,1,1,K) for classify,
/// (n,1,W',A+1) for sequence (W' frames).
Var model_forward(Var x, ParamStore& store, const ModelConfig& cfg, const Mode& mode);

/// Eval-mode logits without gradient bookkeeping kept around.
Tensor model_logits(const Tensor& x, ParamStore& store, const ModelConfig& cfg);

/// Eval-mode argmax class per sample (ties to the lowest index).
std::vector<int> predict_classify(const Tensor& x, ParamStore& store, const ModelConfig& cfg);

/// Eval-mode greedy CTC decode per sample.
std::vector<LabelSequence> predict_sequence(const Tensor& x, ParamStore& store,
                                            const ModelConfig& cfg);

/// Total learnable scalar count.
std::int64_t count_parameters(const ParamStore& store);

}  // namespace inet
