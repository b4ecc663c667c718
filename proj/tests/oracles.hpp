#pragma once

// Independent reference implementations used to cross-check the library.
// Everything here is deliberately the slow, obvious formulation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "intensivenet/tensor.hpp"

namespace oracle {

struct PadInfo {
  int out_h, out_w;
  int pad_top, pad_left;
};

inline PadInfo pad_info(int h, int w, int kh, int kw, int sh, int sw, bool same) {
  PadInfo p{};
  if (same) {
    p.out_h = (h + sh - 1) / sh;
    p.out_w = (w + sw - 1) / sw;
    const int total_h = std::max((p.out_h - 1) * sh + kh - h, 0);
    const int total_w = std::max((p.out_w - 1) * sw + kw - w, 0);
    p.pad_top = total_h / 2;
    p.pad_left = total_w / 2;
  } else {
    p.out_h = (h - kh) / sh + 1;
    p.out_w = (w - kw) / sw + 1;
  }
  return p;
}

/// Direct 6-loop standard convolution; kernel (kh, kw, c_in, c_out).
inline inet::Tensor conv2d(const inet::Tensor& x, const inet::Tensor& k, int sh, int sw,
                           bool same) {
  const auto& s = x.shape();
  const auto& ks = k.shape();
  const int kh = int(ks.n), kw = int(ks.h), cin = int(ks.w), cout = int(ks.c);
  const PadInfo p = pad_info(int(s.h), int(s.w), kh, kw, sh, sw, same);
  inet::Tensor out({s.n, p.out_h, p.out_w, cout});
  for (int n = 0; n < s.n; ++n)
    for (int oh = 0; oh < p.out_h; ++oh)
      for (int ow = 0; ow < p.out_w; ++ow)
        for (int co = 0; co < cout; ++co) {
          double acc = 0.0;
          for (int r = 0; r < kh; ++r)
            for (int q = 0; q < kw; ++q)
              for (int ci = 0; ci < cin; ++ci) {
                const int ih = oh * sh + r - p.pad_top;
                const int iw = ow * sw + q - p.pad_left;
                if (ih < 0 || ih >= s.h || iw < 0 || iw >= s.w) continue;
                acc += x.at(n, ih, iw, ci) * k.at(r, q, ci, co);
              }
          out.at(n, oh, ow, co) = acc;
        }
  return out;
}

/// Per-channel naive convolution; kernel (kh, kw, c, 1).
inline inet::Tensor depthwise(const inet::Tensor& x, const inet::Tensor& k, int sh, int sw,
                              bool same) {
  const auto& s = x.shape();
  const int kh = int(k.shape().n), kw = int(k.shape().h);
  const PadInfo p = pad_info(int(s.h), int(s.w), kh, kw, sh, sw, same);
  inet::Tensor out({s.n, p.out_h, p.out_w, s.c});
  for (int n = 0; n < s.n; ++n)
    for (int oh = 0; oh < p.out_h; ++oh)
      for (int ow = 0; ow < p.out_w; ++ow)
        for (int c = 0; c < s.c; ++c) {
          double acc = 0.0;
          for (int r = 0; r < kh; ++r)
            for (int q = 0; q < kw; ++q) {
              const int ih = oh * sh + r - p.pad_top;
              const int iw = ow * sw + q - p.pad_left;
              if (ih < 0 || ih >= s.h || iw < 0 || iw >= s.w) continue;
              acc += x.at(n, ih, iw, c) * k.at(r, q, c, 0);
            }
          out.at(n, oh, ow, c) = acc;
        }
  return out;
}

/// Per-pixel matrix multiply; kernel (1, 1, c_in, c_out).
inline inet::Tensor pointwise(const inet::Tensor& x, const inet::Tensor& k) {
  const auto& s = x.shape();
  const int cout = int(k.shape().c);
  inet::Tensor out({s.n, s.h, s.w, cout});
  for (int n = 0; n < s.n; ++n)
    for (int h = 0; h < s.h; ++h)
      for (int w = 0; w < s.w; ++w)
        for (int co = 0; co < cout; ++co) {
          double acc = 0.0;
          for (int ci = 0; ci < s.c; ++ci) acc += x.at(n, h, w, ci) * k.at(0, 0, ci, co);
          out.at(n, h, w, co) = acc;
        }
  return out;
}

/// Two-pass per-channel batch statistics over (n, h, w).
inline void batch_stats(const inet::Tensor& x, std::vector<double>& mean,
                        std::vector<double>& var) {
  const auto& s = x.shape();
  const double cnt = double(s.n) * s.h * s.w;
  mean.assign(std::size_t(s.c), 0.0);
  var.assign(std::size_t(s.c), 0.0);
  for (int n = 0; n < s.n; ++n)
    for (int h = 0; h < s.h; ++h)
      for (int w = 0; w < s.w; ++w)
        for (int c = 0; c < s.c; ++c) mean[std::size_t(c)] += x.at(n, h, w, c);
  for (auto& m : mean) m /= cnt;
  for (int n = 0; n < s.n; ++n)
    for (int h = 0; h < s.h; ++h)
      for (int w = 0; w < s.w; ++w)
        for (int c = 0; c < s.c; ++c) {
          const double d = x.at(n, h, w, c) - mean[std::size_t(c)];
          var[std::size_t(c)] += d * d;
        }
  for (auto& v : var) v /= cnt;
}

inline inet::Tensor random_tensor(inet::Shape s, std::mt19937_64& rng, double lo = -1.0,
                                  double hi = 1.0) {
  inet::Tensor t(s);
  std::uniform_real_distribution<double> dist(lo, hi);
  for (std::int64_t i = 0; i < t.size(); ++i) t[i] = dist(rng);
  return t;
}

inline double max_abs_diff(const inet::Tensor& a, const inet::Tensor& b) {
  if (!(a.shape() == b.shape())) return std::numeric_limits<double>::infinity();
  double worst = 0.0;
  for (std::int64_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

/// Row-stochastic T x (A+1) matrix.
inline inet::Matrix random_probs(int t, int alphabet, std::mt19937_64& rng) {
  inet::Matrix m(t, alphabet + 1);
  std::uniform_real_distribution<double> dist(0.05, 1.0);
  for (int r = 0; r < t; ++r) {
    double sum = 0.0;
    for (int c = 0; c <= alphabet; ++c) {
      m.at(r, c) = dist(rng);
      sum += m.at(r, c);
    }
    for (int c = 0; c <= alphabet; ++c) m.at(r, c) /= sum;
  }
  return m;
}

/// All label sequences over [1, alphabet] of length <= max_len (including
/// the empty sequence).
inline std::vector<std::vector<int>> all_targets(int alphabet, int max_len) {
  std::vector<std::vector<int>> out{{}};
  std::size_t lo = 0;
  for (int len = 1; len <= max_len; ++len) {
    const std::size_t hi = out.size();
    for (std::size_t i = lo; i < hi; ++i)
      for (int a = 1; a <= alphabet; ++a) {
        auto t = out[i];
        t.push_back(a);
        out.push_back(std::move(t));
      }
    lo = hi;
  }
  return out;
}

}  // namespace oracle
