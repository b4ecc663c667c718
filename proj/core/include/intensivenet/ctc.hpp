#pragma once

#include <vector>

#include "intensivenet/autograd.hpp"
#include "intensivenet/tensor.hpp"

namespace inet {

/// Target label indices in [1, A]; index 0 is the reserved blank.
using LabelSequence = std::vector<int>;

constexpr int kBlank = 0;

/// Shortest alignment that can emit `target`:
/// length + number of adjacent equal label pairs.
int ctc_min_frames(const LabelSequence& target);

/// Merge adjacent duplicates, then delete blanks.
LabelSequence collapse(const std::vector<int>& path);

/// Per-frame argmax (ties to the lowest index), then collapse.
/// probs is T x (A+1), row-stochastic.
LabelSequence greedy_decode(const Matrix& probs);

struct CtcResult {
  double loss;        // -log P(target | probs)
  Matrix logit_grad;  // dloss/dlogits, assuming probs = softmax(logits), T x (A+1)
};

/// Forward-backward CTC loss over the blank-extended target (length 2L+1),
/// computed in log space. Probabilities are floored at 1e-12 before log.
/// Throws InfeasibleError (carrying the required minimum T) when T is too
/// short for the target.
CtcResult ctc_loss(const Matrix& probs, const LabelSequence& target);

/// Exhaustive oracle: -log of the summed probability of every length-T
/// path whose collapse equals `target`. Guarded to (A+1)^T <= 1e7
/// (SizeError beyond).
double ctc_bruteforce(const Matrix& probs, const LabelSequence& target);

namespace ag {

/// Mean CTC loss over a batch. logits shape (n, 1, T, A+1); frame t is
/// column t. Softmax is applied internally per frame.
Var ctc_loss_mean(Var logits, const std::vector<LabelSequence>& targets);

}  // namespace ag

}  // namespace inet
