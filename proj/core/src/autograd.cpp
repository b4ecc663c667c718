#include "intensivenet/autograd.hpp"

#include <cmath>

namespace inet {

Var Tape::leaf(Tensor value, bool requires_grad) {
  if (consumed_) throw StateError("tape already consumed by backward");
  nodes_.emplace_back();
  TapeNode& n = nodes_.back();
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  return Var(&n, this);
}

Var Tape::param(const ParamStore& store, const std::string& path) {
  if (consumed_) throw StateError("tape already consumed by backward");
  auto it = param_nodes_.find(path);
  if (it != param_nodes_.end()) return Var(it->second, this);
  const ParamEntry& entry = store.at(path);
  nodes_.emplace_back();
  TapeNode& n = nodes_.back();
  n.value = entry.value;
  n.requires_grad = entry.learnable;
  n.param_path = path;
  param_nodes_.emplace(path, &n);
  return Var(&n, this);
}

Var Tape::record(Tensor value, std::vector<Var> inputs,
                 std::function<void(TapeNode&)> backward) {
  if (consumed_) throw StateError("tape already consumed by backward");
  nodes_.emplace_back();
  TapeNode& n = nodes_.back();
  n.value = std::move(value);
  n.inputs.reserve(inputs.size());
  for (const Var& v : inputs) {
    if (v.tape() != this) throw ContractError("record: input from a different tape");
    n.inputs.push_back(v.node());
    n.requires_grad = n.requires_grad || v.node()->requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  return Var(&n, this);
}

GradientMap Tape::backward(const Var& loss, const ParamStore& store) {
  if (consumed_) throw StateError("backward called twice on the same tape");
  if (nodes_.empty()) throw StateError("backward on an empty tape");
  if (loss.tape() != this) throw ContractError("loss recorded on a different tape");
  if (!(loss.shape() == Shape{1, 1, 1, 1})) {
    throw ContractError("backward requires a scalar (1,1,1,1) loss, got " +
                        loss.shape().str());
  }
  consumed_ = true;

  loss.node()->ensure_grad()[0] = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    TapeNode& n = *it;
    if (n.requires_grad && n.grad_alloc && n.backward) {
      n.backward(n);
    }
    // Parameter grads are harvested below; everything else can go now.
    if (n.param_path.empty()) {
      n.value.release();
      if (n.grad_alloc) n.grad.release();
      n.backward = nullptr;
    }
  }

  GradientMap grads;
  for (const auto& [path, entry] : store) {
    if (!entry.learnable) continue;
    auto it = param_nodes_.find(path);
    if (it != param_nodes_.end() && it->second->grad_alloc) {
      grads.emplace(path, std::move(it->second->grad));
    } else {
      grads.emplace(path, Tensor(entry.value.shape(), 0.0));
    }
  }
  nodes_.clear();
  param_nodes_.clear();
  return grads;
}

double finite_difference_check(const LossBuilder& loss_builder, ParamStore& params,
                               double eps) {
  auto eval = [&]() {
    Tape tape;
    Var loss = loss_builder(tape, params);
    return loss.value()[0];
  };

  GradientMap analytic;
  {
    Tape tape;
    Var loss = loss_builder(tape, params);
    analytic = tape.backward(loss, params);
  }

  double worst = 0.0;
  for (auto& [path, entry] : params) {
    if (!entry.learnable) continue;
    const Tensor& g = analytic.at(path);
    for (std::int64_t i = 0; i < entry.value.size(); ++i) {
      const double saved = entry.value[i];
      entry.value[i] = saved + eps;
      const double up = eval();
      entry.value[i] = saved - eps;
      const double down = eval();
      entry.value[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double denom = std::max({std::fabs(g[i]), std::fabs(numeric), 1e-8});
      worst = std::max(worst, std::fabs(g[i] - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace inet
