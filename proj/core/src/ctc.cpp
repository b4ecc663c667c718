#include "intensivenet/ctc.hpp"

#include <cmath>
#include <limits>
#include <memory>

#include "intensivenet/layers.hpp"

namespace inet {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kProbFloor = 1e-12;

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(std::min(a, b) - m));
}

void check_target(const Matrix& probs, const LabelSequence& target) {
  const int alphabet_top = probs.cols - 1;
  if (probs.rows < 1 || probs.cols < 2) {
    throw ContractError("ctc: probs must be T x (A+1) with A >= 1");
  }
  for (int label : target) {
    if (label < 1 || label > alphabet_top) {
      throw ContractError("ctc: target label " + std::to_string(label) +
                          " outside [1," + std::to_string(alphabet_top) + "]");
    }
  }
}

}  // namespace

int ctc_min_frames(const LabelSequence& target) {
  int pairs = 0;
  for (std::size_t i = 1; i < target.size(); ++i) {
    if (target[i] == target[i - 1]) ++pairs;
  }
  return int(target.size()) + pairs;
}

LabelSequence collapse(const std::vector<int>& path) {
  LabelSequence out;
  int prev = -1;
  for (int symbol : path) {
    if (symbol != prev && symbol != kBlank) out.push_back(symbol);
    prev = symbol;
  }
  return out;
}

LabelSequence greedy_decode(const Matrix& probs) {
  std::vector<int> path(probs.rows);
  for (int t = 0; t < probs.rows; ++t) {
    int best = 0;
    for (int k = 1; k < probs.cols; ++k) {
      if (probs.at(t, k) > probs.at(t, best)) best = k;
    }
    path[t] = best;
  }
  return collapse(path);
}

CtcResult ctc_loss(const Matrix& probs, const LabelSequence& target) {
  check_target(probs, target);
  const int frames = probs.rows;
  const int classes = probs.cols;
  const int min_frames = ctc_min_frames(target);
  if (frames < min_frames) {
    throw InfeasibleError("ctc_loss: target needs at least " + std::to_string(min_frames) +
                              " frames, got " + std::to_string(frames),
                          min_frames);
  }

  // Blank-extended target: blank, l1, blank, l2, ..., blank.
  const int ext = 2 * int(target.size()) + 1;
  std::vector<int> labels(ext, kBlank);
  for (std::size_t i = 0; i < target.size(); ++i) labels[2 * i + 1] = target[i];

  Matrix logp(frames, classes);
  for (std::size_t i = 0; i < logp.data.size(); ++i) {
    logp.data[i] = std::log(std::max(probs.data[i], kProbFloor));
  }

  auto can_skip = [&](int s) {
    return labels[s] != kBlank && s >= 2 && labels[s] != labels[s - 2];
  };

  Matrix alpha(frames, ext, kNegInf);
  alpha.at(0, 0) = logp.at(0, labels[0]);
  if (ext > 1) alpha.at(0, 1) = logp.at(0, labels[1]);
  for (int t = 1; t < frames; ++t) {
    for (int s = 0; s < ext; ++s) {
      double a = alpha.at(t - 1, s);
      if (s >= 1) a = log_add(a, alpha.at(t - 1, s - 1));
      if (can_skip(s)) a = log_add(a, alpha.at(t - 1, s - 2));
      alpha.at(t, s) = a + logp.at(t, labels[s]);
    }
  }
  double log_p = alpha.at(frames - 1, ext - 1);
  if (ext > 1) log_p = log_add(log_p, alpha.at(frames - 1, ext - 2));

  // Beta includes the emission at t, mirroring alpha.
  Matrix beta(frames, ext, kNegInf);
  beta.at(frames - 1, ext - 1) = logp.at(frames - 1, labels[ext - 1]);
  if (ext > 1) beta.at(frames - 1, ext - 2) = logp.at(frames - 1, labels[ext - 2]);
  for (int t = frames - 2; t >= 0; --t) {
    for (int s = ext - 1; s >= 0; --s) {
      double b = beta.at(t + 1, s);
      if (s + 1 < ext) b = log_add(b, beta.at(t + 1, s + 1));
      if (s + 2 < ext && labels[s + 2] != kBlank && labels[s + 2] != labels[s]) {
        b = log_add(b, beta.at(t + 1, s + 2));
      }
      beta.at(t, s) = b + logp.at(t, labels[s]);
    }
  }

  // dloss/dlogit[t][k] = p[t][k] - sum_{s: labels[s]=k} P(path through s at t) / P.
  Matrix grad(frames, classes);
  for (int t = 0; t < frames; ++t) {
    std::vector<double> occupancy(classes, kNegInf);
    for (int s = 0; s < ext; ++s) {
      const double g = alpha.at(t, s) + beta.at(t, s) - logp.at(t, labels[s]);
      occupancy[labels[s]] = log_add(occupancy[labels[s]], g);
    }
    for (int k = 0; k < classes; ++k) {
      const double posterior =
          occupancy[k] == kNegInf ? 0.0 : std::exp(occupancy[k] - log_p);
      grad.at(t, k) = probs.at(t, k) - posterior;
    }
  }
  return {-log_p, std::move(grad)};
}

double ctc_bruteforce(const Matrix& probs, const LabelSequence& target) {
  check_target(probs, target);
  const int frames = probs.rows;
  const int classes = probs.cols;
  double instance = 1.0;
  for (int t = 0; t < frames; ++t) {
    instance *= classes;
    if (instance > 1e7) {
      throw SizeError("ctc_bruteforce: (A+1)^T exceeds 1e7");
    }
  }

  std::vector<int> path(frames, 0);
  double total = 0.0;
  while (true) {
    if (collapse(path) == target) {
      double p = 1.0;
      for (int t = 0; t < frames; ++t) {
        p *= std::max(probs.at(t, path[t]), kProbFloor);
      }
      total += p;
    }
    int t = frames - 1;
    while (t >= 0 && ++path[t] == classes) path[t--] = 0;
    if (t < 0) break;
  }
  if (total == 0.0) {
    throw InfeasibleError("ctc_bruteforce: target has probability 0 at this length",
                          ctc_min_frames(target));
  }
  return -std::log(total);
}

namespace ag {

Var ctc_loss_mean(Var logits, const std::vector<LabelSequence>& targets) {
  const Shape& s = logits.shape();
  if (s.h != 1) throw ContractError("ctc_loss_mean: logits must be (n,1,T,A+1)");
  if (int(targets.size()) != s.n) {
    throw ContractError("ctc_loss_mean: target count != batch size");
  }
  const int frames = s.w;
  const int classes = s.c;

  auto grads = std::make_shared<std::vector<Matrix>>();
  grads->reserve(s.n);
  double total = 0.0;
  for (int i = 0; i < s.n; ++i) {
    Matrix probs(frames, classes);
    for (int t = 0; t < frames; ++t) {
      double mx = kNegInf;
      for (int k = 0; k < classes; ++k) mx = std::max(mx, logits.value().at(i, 0, t, k));
      double sum = 0.0;
      for (int k = 0; k < classes; ++k) {
        probs.at(t, k) = std::exp(logits.value().at(i, 0, t, k) - mx);
        sum += probs.at(t, k);
      }
      for (int k = 0; k < classes; ++k) probs.at(t, k) /= sum;
    }
    CtcResult r = ctc_loss(probs, targets[i]);
    total += r.loss;
    grads->push_back(std::move(r.logit_grad));
  }
  Tensor out({1, 1, 1, 1});
  out[0] = total / s.n;

  return logits.tape()->record(std::move(out), {logits}, [ln = logits.node(), grads](TapeNode& n) {
    const Shape& s = ln->value.shape();
    Tensor& dz = ln->ensure_grad();
    const double g = n.grad[0] / s.n;
    for (int i = 0; i < s.n; ++i) {
      const Matrix& gi = (*grads)[std::size_t(i)];
      for (int t = 0; t < s.w; ++t) {
        for (int k = 0; k < s.c; ++k) {
          dz.at(i, 0, t, k) += g * gi.at(t, k);
        }
      }
    }
  });
}

}  // namespace ag

}  // namespace inet
