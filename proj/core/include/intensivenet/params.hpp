#pragma once

#include <map>
#include <string>

#include "intensivenet/tensor.hpp"

namespace inet {

/// One named parameter array. `learnable` marks entries that receive
/// gradients and SGD updates; `decay` marks the subset subject to weight
/// decay (kernels and biases, not BN scale/shift). BN running statistics
/// live here too with learnable=false so checkpoints capture them.
struct ParamEntry {
  Tensor value;
  bool learnable = true;
  bool decay = true;
};

/// Parameters addressable by slash-separated string path. The map is
/// ordered, which fixes the lexicographic manifest order required by the
/// checkpoint format.
class ParamStore {
 public:
  ParamEntry& emplace(const std::string& path, Tensor value, bool learnable = true,
                      bool decay = true) {
    auto [it, inserted] = entries_.try_emplace(path, ParamEntry{std::move(value), learnable, decay});
    if (!inserted) {
      throw ContractError("ParamStore: duplicate parameter path " + path);
    }
    return it->second;
  }

  bool contains(const std::string& path) const { return entries_.count(path) != 0; }

  ParamEntry& at(const std::string& path) {
    auto it = entries_.find(path);
    if (it == entries_.end()) throw ContractError("ParamStore: unknown path " + path);
    return it->second;
  }
  const ParamEntry& at(const std::string& path) const {
    auto it = entries_.find(path);
    if (it == entries_.end()) throw ContractError("ParamStore: unknown path " + path);
    return it->second;
  }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  std::size_t size() const { return entries_.size(); }

 private:
  std::map<std::string, ParamEntry> entries_;
};

/// Parameter path -> gradient tensor (same shape as the parameter).
using GradientMap = std::map<std::string, Tensor>;

}  // namespace inet
