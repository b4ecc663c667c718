#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "intensivenet/autograd.hpp"
#include "intensivenet/params.hpp"
#include "intensivenet/tensor.hpp"

namespace inet {

// ---------------------------------------------------------------------------
// Plain tensor kernels (pure functions, no tape)
// ---------------------------------------------------------------------------

Tensor relu(const Tensor& x);

/// Standard convolution; kernel axes read as (kh, kw, c_in, c_out).
Tensor conv2d(const Tensor& x, const Tensor& kernel, Dim2 stride, Padding pad);

/// Per-channel spatial convolution; kernel axes (kh, kw, c, 1). Output
/// channel i depends only on input channel i.
Tensor depthwise_conv(const Tensor& x, const Tensor& kernel, Dim2 stride, Padding pad);

/// 1x1 cross-channel convolution; kernel axes (1, 1, c_in, c_out).
Tensor pointwise_conv(const Tensor& x, const Tensor& kernel);

/// Channel-axis softmax with max-subtraction.
Tensor softmax_channels(const Tensor& z);

/// Per-channel batch normalization state. Vectors are (1,1,1,c).
struct BatchNormParams {
  Tensor gamma;
  Tensor beta;
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.9;
  double epsilon = 1e-5;
};

/// Train mode normalizes by batch statistics over (n,h,w) and updates the
/// running stats (r <- momentum*r + (1-momentum)*batch); eval mode uses
/// the running stats. Mutates only bn's running stats, and only in train.
Tensor batch_norm(const Tensor& x, BatchNormParams& bn, bool train);

struct DropoutConfig {
  double rate = 0.0;  // in [0,1)
  bool train = false;
};

/// Inverted dropout: eval is the identity; train zeroes entries with
/// probability `rate` and scales survivors by 1/(1-rate).
Tensor dropout(const Tensor& x, const DropoutConfig& cfg, std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// Taped (differentiable) ops
// ---------------------------------------------------------------------------

/// Forward/record-time mode switch shared by BN and dropout.
struct Mode {
  bool train = false;
  std::mt19937_64* rng = nullptr;  // required when train && dropout rate > 0
};

namespace ag {

Var relu(Var x);
Var add(Var a, Var b);  // b same shape or per-channel (1,1,1,c)
Var mul(Var a, Var b);  // elementwise, same shape
Var sum(Var x);         // scalar (1,1,1,1)
Var concat_channels(const std::vector<Var>& inputs);
Var conv2d(Var x, Var kernel, Dim2 stride, Padding pad);
Var depthwise_conv(Var x, Var kernel, Dim2 stride, Padding pad);
Var pointwise_conv(Var x, Var kernel);
Var softmax_channels(Var z);
Var batch_norm(Var x, Var gamma, Var beta, ParamEntry& running_mean,
               ParamEntry& running_var, double momentum, double epsilon, bool train);
Var dropout(Var x, double rate, const Mode& mode);

/// Mean over the batch of -log softmax(logits)[label]; logits (n,1,1,K).
Var softmax_cross_entropy(Var logits, const std::vector<int>& labels);

}  // namespace ag

// ---------------------------------------------------------------------------
// Convolution unit: ReLU -> conv -> +bias -> BN
// ---------------------------------------------------------------------------

enum class ConvKind { Separable, Standard };

/// One ReLU -> (depthwise -> pointwise | standard conv) -> bias -> BN unit.
struct ConvUnitSpec {
  int kh = 3;
  int kw = 3;
  int c_in = 1;
  int c_out = 1;
  Dim2 stride{1, 1};
  Padding pad = Padding::Same;
  ConvKind kind = ConvKind::Separable;
  double bn_momentum = 0.9;
  double bn_epsilon = 1e-5;
  bool with_bn = true;
  bool with_relu = true;
};

/// Creates the unit's parameters under `prefix`: dw/pw (or kernel), bias,
/// bn/{gamma,beta,running_mean,running_var}. Kernels are zero-mean
/// Gaussian with variance 2/fan_in, derived deterministically from
/// (seed, path).
void init_conv_unit(ParamStore& store, const std::string& prefix, const ConvUnitSpec& spec,
                    std::uint64_t seed);

/// Taped forward through the unit.
Var conv_unit(Var x, ParamStore& store, const std::string& prefix, const ConvUnitSpec& spec,
              const Mode& mode);

/// Learnable scalar count of one unit (kernels + bias + BN scale/shift).
std::int64_t conv_unit_param_count(const ConvUnitSpec& spec);

}  // namespace inet
