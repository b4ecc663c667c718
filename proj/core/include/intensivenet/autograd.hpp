#pragma once

#include <deque>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "intensivenet/params.hpp"
#include "intensivenet/tensor.hpp"

namespace inet {

class Tape;

/// One recorded operation. Recording order is a valid topological order,
/// so the backward sweep is simply the reverse iteration of the tape.
struct TapeNode {
  Tensor value;
  Tensor grad;                 // allocated lazily during backward
  bool grad_alloc = false;
  bool requires_grad = false;
  std::string param_path;      // non-empty for parameter leaves
  std::vector<TapeNode*> inputs;
  /// Reads this->grad and accumulates into inputs' grads.
  std::function<void(TapeNode&)> backward;

  Tensor& ensure_grad() {
    if (!grad_alloc) {
      grad = Tensor(value.shape(), 0.0);
      grad_alloc = true;
    }
    return grad;
  }
};

/// Lightweight handle into a tape.
class Var {
 public:
  Var() = default;
  Var(TapeNode* node, Tape* tape) : node_(node), tape_(tape) {}

  const Tensor& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_->requires_grad; }
  TapeNode* node() const { return node_; }
  Tape* tape() const { return tape_; }

 private:
  TapeNode* node_ = nullptr;
  Tape* tape_ = nullptr;
};

/// Reverse-mode tape. One tape per training step; confined to one thread.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Records a non-parameter leaf (inputs, constants).
  Var leaf(Tensor value, bool requires_grad = false);

  /// Records a parameter leaf. Repeated requests for the same path return
  /// the same node, so gradients from multiple uses accumulate.
  Var param(const ParamStore& store, const std::string& path);

  /// Records an interior node. `backward` may be empty for detached ops.
  Var record(Tensor value, std::vector<Var> inputs,
             std::function<void(TapeNode&)> backward);

  /// Backpropagates from a scalar loss and collects dloss/dparam for every
  /// learnable parameter of `store` (zeros for unreachable ones). Frees
  /// node buffers as it goes and leaves the tape consumed: a second call
  /// throws StateError.
  GradientMap backward(const Var& loss, const ParamStore& store);

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

 private:
  std::deque<TapeNode> nodes_;
  std::unordered_map<std::string, TapeNode*> param_nodes_;
  bool consumed_ = false;
};

/// Builds a scalar loss Var for the current parameter values. Used by the
/// finite-difference checker for both the analytic and numeric routes.
using LossBuilder = std::function<Var(Tape&, ParamStore&)>;

/// Max over all learnable parameter entries of
///   |g_analytic - g_numeric| / max(|g_analytic|, |g_numeric|, 1e-8)
/// with g_numeric the central difference (f(t+eps)-f(t-eps))/2eps.
/// Returns 0 for a model with no learnable parameters.
double finite_difference_check(const LossBuilder& loss_builder, ParamStore& params,
                               double eps = 1e-5);

}  // namespace inet
