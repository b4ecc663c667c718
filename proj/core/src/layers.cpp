#include "intensivenet/layers.hpp"

#include <cblas.h>

#include <cmath>
#include <memory>

#include "intensivenet/rng.hpp"

namespace inet {

namespace {

void gemm(bool trans_a, bool trans_b, int m, int n, int k, const double* a, int lda,
          const double* b, int ldb, double beta, double* c, int ldc) {
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, 1.0, a, lda, b, ldb, beta,
              c, ldc);
}

void check_conv_channels(const char* op, int x_c, int k_c) {
  if (x_c != k_c) {
    throw DimensionError(std::string(op) + ": input has " + std::to_string(x_c) +
                         " channels but kernel expects " + std::to_string(k_c));
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Plain kernels
// ---------------------------------------------------------------------------

Tensor relu(const Tensor& x) {
  Tensor out = x;
  for (std::int64_t i = 0; i < out.size(); ++i) {
    if (out[i] < 0.0) out[i] = 0.0;
  }
  return out;
}

Tensor conv2d(const Tensor& x, const Tensor& kernel, Dim2 stride, Padding pad) {
  const Shape& ks = kernel.shape();  // (kh, kw, c_in, c_out)
  check_conv_channels("conv2d", x.shape().c, ks.w);
  if (pad == Padding::Same && (ks.n % 2 == 0 || ks.h % 2 == 0)) {
    throw ConfigError("conv2d: same padding requires odd kernel extents");
  }
  const Dim2 out_hw = conv_out_size({x.shape().h, x.shape().w}, {ks.n, ks.h}, stride, pad);
  const Matrix cols = im2col(x, {ks.n, ks.h}, stride, pad);
  Tensor out = Tensor::uninit({x.shape().n, out_hw.h, out_hw.w, ks.c});
  gemm(false, false, cols.rows, ks.c, cols.cols, cols.data.data(), cols.cols,
       kernel.data(), ks.c, 0.0, out.data(), ks.c);
  return out;
}

Tensor depthwise_conv(const Tensor& x, const Tensor& kernel, Dim2 stride, Padding pad) {
  const Shape& s = x.shape();
  const Shape& ks = kernel.shape();  // (kh, kw, c, 1)
  check_conv_channels("depthwise_conv", s.c, ks.w);
  if (ks.c != 1) throw DimensionError("depthwise_conv: kernel must have multiplier 1");
  const Dim2 khw{ks.n, ks.h};
  const Dim2 out_hw = conv_out_size({s.h, s.w}, khw, stride, pad);
  const Dim2 before = pad_before({s.h, s.w}, khw, stride, pad);
  Tensor out = Tensor::uninit({s.n, out_hw.h, out_hw.w, s.c});
  // Valid output range for a kernel offset: in = o*stride - before + k
  // must land in [0, extent).
  const auto lo = [](int k, int before, int stride) {
    const int a = before - k;
    return a <= 0 ? 0 : (a + stride - 1) / stride;
  };
  const auto hi = [](int k, int before, int stride, int in, int out) {
    const int b = in - 1 + before - k;
    return b < 0 ? -1 : std::min(out - 1, b / stride);
  };
  for (int n = 0; n < s.n; ++n) {
    for (int oh = 0; oh < out_hw.h; ++oh) {
      double* orow = out.data() + (std::int64_t(n) * out_hw.h + oh) * out_hw.w * s.c;
      std::fill(orow, orow + std::int64_t(out_hw.w) * s.c, 0.0);
      for (int kh = 0; kh < khw.h; ++kh) {
        const int ih = oh * stride.h - before.h + kh;
        if (ih < 0 || ih >= s.h) continue;
        const double* xrow = x.data() + (std::int64_t(n) * s.h + ih) * s.w * s.c;
        for (int kw = 0; kw < khw.w; ++kw) {
          const double* k = kernel.data() + (std::int64_t(kh) * khw.w + kw) * s.c;
          const int ow_lo = lo(kw, before.w, stride.w);
          const int ow_hi = hi(kw, before.w, stride.w, s.w, out_hw.w);
          for (int ow = ow_lo; ow <= ow_hi; ++ow) {
            const double* src = xrow + std::int64_t(ow * stride.w - before.w + kw) * s.c;
            double* dst = orow + std::int64_t(ow) * s.c;
            for (int c = 0; c < s.c; ++c) dst[c] += src[c] * k[c];
          }
        }
      }
    }
  }
  return out;
}

Tensor pointwise_conv(const Tensor& x, const Tensor& kernel) {
  const Shape& s = x.shape();
  const Shape& ks = kernel.shape();  // (1, 1, c_in, c_out)
  if (ks.n != 1 || ks.h != 1) throw DimensionError("pointwise_conv: kernel must be 1x1");
  check_conv_channels("pointwise_conv", s.c, ks.w);
  Tensor out = Tensor::uninit({s.n, s.h, s.w, ks.c});
  const int positions = int(std::int64_t(s.n) * s.h * s.w);
  gemm(false, false, positions, ks.c, s.c, x.data(), s.c, kernel.data(), ks.c, 0.0,
       out.data(), ks.c);
  return out;
}

Tensor softmax_channels(const Tensor& z) {
  const Shape& s = z.shape();
  Tensor out = Tensor::uninit(s);
  const std::int64_t positions = std::int64_t(s.n) * s.h * s.w;
  for (std::int64_t p = 0; p < positions; ++p) {
    const double* src = z.data() + p * s.c;
    double* dst = out.data() + p * s.c;
    double mx = src[0];
    for (int c = 1; c < s.c; ++c) mx = std::max(mx, src[c]);
    double sum = 0.0;
    for (int c = 0; c < s.c; ++c) {
      dst[c] = std::exp(src[c] - mx);
      sum += dst[c];
    }
    for (int c = 0; c < s.c; ++c) dst[c] /= sum;
  }
  return out;
}

namespace {

struct BatchStats {
  std::vector<double> mean;
  std::vector<double> var;  // biased
};

BatchStats batch_stats(const Tensor& x) {
  const Shape& s = x.shape();
  const std::int64_t positions = std::int64_t(s.n) * s.h * s.w;
  BatchStats st{std::vector<double>(s.c, 0.0), std::vector<double>(s.c, 0.0)};
  for (std::int64_t p = 0; p < positions; ++p) {
    const double* row = x.data() + p * s.c;
    for (int c = 0; c < s.c; ++c) st.mean[c] += row[c];
  }
  for (int c = 0; c < s.c; ++c) st.mean[c] /= double(positions);
  for (std::int64_t p = 0; p < positions; ++p) {
    const double* row = x.data() + p * s.c;
    for (int c = 0; c < s.c; ++c) {
      const double d = row[c] - st.mean[c];
      st.var[c] += d * d;
    }
  }
  for (int c = 0; c < s.c; ++c) st.var[c] /= double(positions);
  return st;
}

Tensor bn_apply(const Tensor& x, const double* mean, const double* var, const double* gamma,
                const double* beta, double eps) {
  const Shape& s = x.shape();
  std::vector<double> inv_std(s.c);
  for (int c = 0; c < s.c; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + eps);
  Tensor out = Tensor::uninit(s);
  const std::int64_t positions = std::int64_t(s.n) * s.h * s.w;
  for (std::int64_t p = 0; p < positions; ++p) {
    const double* src = x.data() + p * s.c;
    double* dst = out.data() + p * s.c;
    for (int c = 0; c < s.c; ++c) {
      dst[c] = gamma[c] * (src[c] - mean[c]) * inv_std[c] + beta[c];
    }
  }
  return out;
}

void check_bn_widths(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                     const Tensor& rm, const Tensor& rv) {
  const int c = x.shape().c;
  for (const Tensor* v : {&gamma, &beta, &rm, &rv}) {
    if (!(v->shape() == Shape{1, 1, 1, c})) {
      throw DimensionError("batch_norm: per-channel vector shape " + v->shape().str() +
                           " does not match " + std::to_string(c) + " channels");
    }
  }
}

}  // namespace

Tensor batch_norm(const Tensor& x, BatchNormParams& bn, bool train) {
  check_bn_widths(x, bn.gamma, bn.beta, bn.running_mean, bn.running_var);
  if (!train) {
    return bn_apply(x, bn.running_mean.data(), bn.running_var.data(), bn.gamma.data(),
                    bn.beta.data(), bn.epsilon);
  }
  const BatchStats st = batch_stats(x);
  for (int c = 0; c < x.shape().c; ++c) {
    bn.running_mean[c] = bn.momentum * bn.running_mean[c] + (1.0 - bn.momentum) * st.mean[c];
    bn.running_var[c] = bn.momentum * bn.running_var[c] + (1.0 - bn.momentum) * st.var[c];
  }
  return bn_apply(x, st.mean.data(), st.var.data(), bn.gamma.data(), bn.beta.data(),
                  bn.epsilon);
}

Tensor dropout(const Tensor& x, const DropoutConfig& cfg, std::mt19937_64& rng) {
  if (cfg.rate < 0.0 || cfg.rate >= 1.0) {
    throw ConfigError("dropout: rate must lie in [0,1)");
  }
  if (!cfg.train || cfg.rate == 0.0) return x;
  Tensor out = x;
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const double scale = 1.0 / (1.0 - cfg.rate);
  for (std::int64_t i = 0; i < out.size(); ++i) {
    out[i] = uni(rng) < cfg.rate ? 0.0 : out[i] * scale;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Taped ops
// ---------------------------------------------------------------------------

namespace ag {

Var relu(Var x) {
  return x.tape()->record(inet::relu(x.value()), {x}, [xn = x.node()](TapeNode& n) {
    Tensor& dx = xn->ensure_grad();
    for (std::int64_t i = 0; i < n.grad.size(); ++i) {
      if (xn->value[i] > 0.0) dx[i] += n.grad[i];
    }
  });
}

Var add(Var a, Var b) {
  Tensor out = elementwise_add(a.value(), b.value());
  const bool broadcast = !(a.shape() == b.shape());
  return a.tape()->record(
      std::move(out), {a, b}, [an = a.node(), bn = b.node(), broadcast](TapeNode& n) {
        if (an->requires_grad) {
          Tensor& da = an->ensure_grad();
          for (std::int64_t i = 0; i < n.grad.size(); ++i) da[i] += n.grad[i];
        }
        if (bn->requires_grad) {
          Tensor& db = bn->ensure_grad();
          if (!broadcast) {
            for (std::int64_t i = 0; i < n.grad.size(); ++i) db[i] += n.grad[i];
          } else {
            const int c = bn->value.shape().c;
            const std::int64_t positions = n.grad.size() / c;
            for (std::int64_t p = 0; p < positions; ++p) {
              const double* g = n.grad.data() + p * c;
              for (int j = 0; j < c; ++j) db[j] += g[j];
            }
          }
        }
      });
}

Var mul(Var a, Var b) {
  if (!(a.shape() == b.shape())) {
    throw DimensionError("ag::mul: shapes differ");
  }
  Tensor out = a.value();
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return a.tape()->record(std::move(out), {a, b}, [an = a.node(), bn = b.node()](TapeNode& n) {
    if (an->requires_grad) {
      Tensor& da = an->ensure_grad();
      for (std::int64_t i = 0; i < n.grad.size(); ++i) da[i] += n.grad[i] * bn->value[i];
    }
    if (bn->requires_grad) {
      Tensor& db = bn->ensure_grad();
      for (std::int64_t i = 0; i < n.grad.size(); ++i) db[i] += n.grad[i] * an->value[i];
    }
  });
}

Var sum(Var x) {
  double total = 0.0;
  for (std::int64_t i = 0; i < x.value().size(); ++i) total += x.value()[i];
  Tensor out({1, 1, 1, 1});
  out[0] = total;
  return x.tape()->record(std::move(out), {x}, [xn = x.node()](TapeNode& n) {
    Tensor& dx = xn->ensure_grad();
    const double g = n.grad[0];
    for (std::int64_t i = 0; i < dx.size(); ++i) dx[i] += g;
  });
}

Var concat_channels(const std::vector<Var>& inputs) {
  if (inputs.empty()) throw ContractError("ag::concat_channels: empty input list");
  std::vector<Tensor> values;
  values.reserve(inputs.size());
  for (const Var& v : inputs) values.push_back(v.value());
  Tensor out = inet::concat_channels(values);
  std::vector<TapeNode*> nodes;
  for (const Var& v : inputs) nodes.push_back(v.node());
  return inputs[0].tape()->record(std::move(out), inputs, [nodes](TapeNode& n) {
    const Shape& os = n.value.shape();
    const std::int64_t positions = std::int64_t(os.n) * os.h * os.w;
    int offset = 0;
    for (TapeNode* in : nodes) {
      const int c = in->value.shape().c;
      if (in->requires_grad) {
        Tensor& di = in->ensure_grad();
        for (std::int64_t p = 0; p < positions; ++p) {
          const double* g = n.grad.data() + p * os.c + offset;
          double* d = di.data() + p * c;
          for (int j = 0; j < c; ++j) d[j] += g[j];
        }
      }
      offset += c;
    }
  });
}

Var conv2d(Var x, Var kernel, Dim2 stride, Padding pad) {
  Tensor out = inet::conv2d(x.value(), kernel.value(), stride, pad);
  return x.tape()->record(
      std::move(out), {x, kernel},
      [xn = x.node(), kn = kernel.node(), stride, pad](TapeNode& n) {
        const Shape& ks = kn->value.shape();
        const Dim2 khw{ks.n, ks.h};
        const int c_out = ks.c;
        const int rows = int(n.grad.size() / c_out);
        // Patch matrix is recomputed rather than saved across the pass.
        const Matrix cols = im2col(xn->value, khw, stride, pad);
        if (kn->requires_grad) {
          Tensor& dk = kn->ensure_grad();
          gemm(true, false, cols.cols, c_out, rows, cols.data.data(), cols.cols,
               n.grad.data(), c_out, 1.0, dk.data(), c_out);
        }
        if (xn->requires_grad) {
          Matrix dcols(rows, cols.cols);
          gemm(false, true, rows, cols.cols, c_out, n.grad.data(), c_out,
               kn->value.data(), c_out, 0.0, dcols.data.data(), cols.cols);
          Tensor dx = col2im(dcols, xn->value.shape(), khw, stride, pad);
          Tensor& acc = xn->ensure_grad();
          for (std::int64_t i = 0; i < acc.size(); ++i) acc[i] += dx[i];
        }
      });
}

Var depthwise_conv(Var x, Var kernel, Dim2 stride, Padding pad) {
  Tensor out = inet::depthwise_conv(x.value(), kernel.value(), stride, pad);
  return x.tape()->record(
      std::move(out), {x, kernel},
      [xn = x.node(), kn = kernel.node(), stride, pad](TapeNode& n) {
        const Shape& s = xn->value.shape();
        const Shape& ks = kn->value.shape();
        const Dim2 khw{ks.n, ks.h};
        const Shape& os = n.value.shape();
        const Dim2 before = pad_before({s.h, s.w}, khw, stride, pad);
        Tensor* dx = xn->requires_grad ? &xn->ensure_grad() : nullptr;
        Tensor* dk = kn->requires_grad ? &kn->ensure_grad() : nullptr;
        const auto lo = [](int k, int before, int stride) {
          const int a = before - k;
          return a <= 0 ? 0 : (a + stride - 1) / stride;
        };
        const auto hi = [](int k, int before, int stride, int in, int out) {
          const int b = in - 1 + before - k;
          return b < 0 ? -1 : std::min(out - 1, b / stride);
        };
        for (int b = 0; b < s.n; ++b) {
          for (int oh = 0; oh < os.h; ++oh) {
            const double* grow =
                n.grad.data() + (std::int64_t(b) * os.h + oh) * os.w * s.c;
            for (int kh = 0; kh < khw.h; ++kh) {
              const int ih = oh * stride.h - before.h + kh;
              if (ih < 0 || ih >= s.h) continue;
              const std::int64_t xrow = (std::int64_t(b) * s.h + ih) * s.w * s.c;
              for (int kw = 0; kw < khw.w; ++kw) {
                const std::int64_t koff = (std::int64_t(kh) * khw.w + kw) * s.c;
                const int ow_lo = lo(kw, before.w, stride.w);
                const int ow_hi = hi(kw, before.w, stride.w, s.w, os.w);
                if (dx) {
                  const double* k = kn->value.data() + koff;
                  for (int ow = ow_lo; ow <= ow_hi; ++ow) {
                    double* d =
                        dx->data() + xrow + std::int64_t(ow * stride.w - before.w + kw) * s.c;
                    const double* g = grow + std::int64_t(ow) * s.c;
                    for (int c = 0; c < s.c; ++c) d[c] += k[c] * g[c];
                  }
                }
                if (dk) {
                  double* d = dk->data() + koff;
                  for (int ow = ow_lo; ow <= ow_hi; ++ow) {
                    const double* xv =
                        xn->value.data() + xrow +
                        std::int64_t(ow * stride.w - before.w + kw) * s.c;
                    const double* g = grow + std::int64_t(ow) * s.c;
                    for (int c = 0; c < s.c; ++c) d[c] += xv[c] * g[c];
                  }
                }
              }
            }
          }
        }
      });
}

Var pointwise_conv(Var x, Var kernel) {
  Tensor out = inet::pointwise_conv(x.value(), kernel.value());
  return x.tape()->record(
      std::move(out), {x, kernel}, [xn = x.node(), kn = kernel.node()](TapeNode& n) {
        const int c_in = xn->value.shape().c;
        const int c_out = kn->value.shape().c;
        const int rows = int(n.grad.size() / c_out);
        if (kn->requires_grad) {
          Tensor& dk = kn->ensure_grad();
          gemm(true, false, c_in, c_out, rows, xn->value.data(), c_in, n.grad.data(),
               c_out, 1.0, dk.data(), c_out);
        }
        if (xn->requires_grad) {
          Tensor& dx = xn->ensure_grad();
          gemm(false, true, rows, c_in, c_out, n.grad.data(), c_out, kn->value.data(),
               c_out, 1.0, dx.data(), c_in);
        }
      });
}

Var softmax_channels(Var z) {
  Tensor out = inet::softmax_channels(z.value());
  return z.tape()->record(std::move(out), {z}, [zn = z.node()](TapeNode& n) {
    const Shape& s = n.value.shape();
    Tensor& dz = zn->ensure_grad();
    const std::int64_t positions = std::int64_t(s.n) * s.h * s.w;
    for (std::int64_t p = 0; p < positions; ++p) {
      const double* pr = n.value.data() + p * s.c;
      const double* g = n.grad.data() + p * s.c;
      double dot = 0.0;
      for (int c = 0; c < s.c; ++c) dot += g[c] * pr[c];
      double* d = dz.data() + p * s.c;
      for (int c = 0; c < s.c; ++c) d[c] += pr[c] * (g[c] - dot);
    }
  });
}

Var batch_norm(Var x, Var gamma, Var beta, ParamEntry& running_mean,
               ParamEntry& running_var, double momentum, double epsilon, bool train) {
  const Tensor& xv = x.value();
  check_bn_widths(xv, gamma.value(), beta.value(), running_mean.value, running_var.value);
  const Shape& s = xv.shape();

  std::shared_ptr<BatchStats> st;
  if (train) {
    st = std::make_shared<BatchStats>(batch_stats(xv));
    for (int c = 0; c < s.c; ++c) {
      running_mean.value[c] = momentum * running_mean.value[c] + (1.0 - momentum) * st->mean[c];
      running_var.value[c] = momentum * running_var.value[c] + (1.0 - momentum) * st->var[c];
    }
  } else {
    st = std::make_shared<BatchStats>();
    st->mean.assign(running_mean.value.data(), running_mean.value.data() + s.c);
    st->var.assign(running_var.value.data(), running_var.value.data() + s.c);
  }
  Tensor out = bn_apply(xv, st->mean.data(), st->var.data(), gamma.value().data(),
                        beta.value().data(), epsilon);

  return x.tape()->record(
      std::move(out), {x, gamma, beta},
      [xn = x.node(), gn = gamma.node(), bn = beta.node(), st, epsilon, train](TapeNode& n) {
        const Shape& s = xn->value.shape();
        const std::int64_t m = std::int64_t(s.n) * s.h * s.w;
        std::vector<double> inv_std(s.c);
        for (int c = 0; c < s.c; ++c) inv_std[c] = 1.0 / std::sqrt(st->var[c] + epsilon);

        // Per-channel reductions of dy and dy*xhat.
        std::vector<double> sum_dy(s.c, 0.0), sum_dy_xhat(s.c, 0.0);
        for (std::int64_t p = 0; p < m; ++p) {
          const double* g = n.grad.data() + p * s.c;
          const double* xv = xn->value.data() + p * s.c;
          for (int c = 0; c < s.c; ++c) {
            sum_dy[c] += g[c];
            sum_dy_xhat[c] += g[c] * (xv[c] - st->mean[c]) * inv_std[c];
          }
        }
        if (gn->requires_grad) {
          Tensor& dg = gn->ensure_grad();
          for (int c = 0; c < s.c; ++c) dg[c] += sum_dy_xhat[c];
        }
        if (bn->requires_grad) {
          Tensor& db = bn->ensure_grad();
          for (int c = 0; c < s.c; ++c) db[c] += sum_dy[c];
        }
        if (xn->requires_grad) {
          Tensor& dx = xn->ensure_grad();
          const double* gam = gn->value.data();
          if (train) {
            for (std::int64_t p = 0; p < m; ++p) {
              const double* g = n.grad.data() + p * s.c;
              const double* xv = xn->value.data() + p * s.c;
              double* d = dx.data() + p * s.c;
              for (int c = 0; c < s.c; ++c) {
                const double xhat = (xv[c] - st->mean[c]) * inv_std[c];
                d[c] += gam[c] * inv_std[c] *
                        (g[c] - sum_dy[c] / double(m) - xhat * sum_dy_xhat[c] / double(m));
              }
            }
          } else {
            // Running stats are constants in eval mode.
            for (std::int64_t p = 0; p < m; ++p) {
              const double* g = n.grad.data() + p * s.c;
              double* d = dx.data() + p * s.c;
              for (int c = 0; c < s.c; ++c) d[c] += gam[c] * inv_std[c] * g[c];
            }
          }
        }
      });
}

Var dropout(Var x, double rate, const Mode& mode) {
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout: rate must lie in [0,1)");
  if (!mode.train || rate == 0.0) {
    return x.tape()->record(x.value(), {x}, [xn = x.node()](TapeNode& n) {
      Tensor& dx = xn->ensure_grad();
      for (std::int64_t i = 0; i < n.grad.size(); ++i) dx[i] += n.grad[i];
    });
  }
  if (mode.rng == nullptr) throw ContractError("dropout: train mode requires an RNG");
  const double scale = 1.0 / (1.0 - rate);
  auto mask = std::make_shared<std::vector<double>>(std::size_t(x.value().size()));
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  for (double& v : *mask) v = uni(*mode.rng) < rate ? 0.0 : scale;
  Tensor out = x.value();
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] *= (*mask)[std::size_t(i)];
  return x.tape()->record(std::move(out), {x}, [xn = x.node(), mask](TapeNode& n) {
    Tensor& dx = xn->ensure_grad();
    for (std::int64_t i = 0; i < n.grad.size(); ++i) {
      dx[i] += n.grad[i] * (*mask)[std::size_t(i)];
    }
  });
}

Var softmax_cross_entropy(Var logits, const std::vector<int>& labels) {
  const Shape& s = logits.shape();
  if (s.h != 1 || s.w != 1) {
    throw ContractError("softmax_cross_entropy: logits must be (n,1,1,K)");
  }
  if (int(labels.size()) != s.n) {
    throw ContractError("softmax_cross_entropy: label count != batch size");
  }
  auto probs = std::make_shared<Tensor>(inet::softmax_channels(logits.value()));
  double total = 0.0;
  for (int i = 0; i < s.n; ++i) {
    const int y = labels[i];
    if (y < 0 || y >= s.c) throw ContractError("softmax_cross_entropy: label out of range");
    total += -std::log(std::max(probs->at(i, 0, 0, y), 1e-300));
  }
  Tensor out({1, 1, 1, 1});
  out[0] = total / s.n;
  return logits.tape()->record(
      std::move(out), {logits}, [ln = logits.node(), probs, labels](TapeNode& n) {
        const Shape& s = ln->value.shape();
        Tensor& dz = ln->ensure_grad();
        const double g = n.grad[0] / s.n;
        for (int i = 0; i < s.n; ++i) {
          for (int c = 0; c < s.c; ++c) {
            const double target = (c == labels[i]) ? 1.0 : 0.0;
            dz.at(i, 0, 0, c) += g * (probs->at(i, 0, 0, c) - target);
          }
        }
      });
}

}  // namespace ag

// ---------------------------------------------------------------------------
// Convolution unit
// ---------------------------------------------------------------------------

namespace {

Tensor gaussian_kernel(Shape shape, int fan_in, std::uint64_t seed, const std::string& path) {
  Tensor t(shape);
  std::mt19937_64 rng = rng_for(seed, path);
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / double(fan_in)));
  for (std::int64_t i = 0; i < t.size(); ++i) t[i] = dist(rng);
  return t;
}

}  // namespace

void init_conv_unit(ParamStore& store, const std::string& prefix, const ConvUnitSpec& spec,
                    std::uint64_t seed) {
  if (spec.c_out < 1) throw ConfigError("conv unit: c_out must be >= 1");
  if (spec.pad == Padding::Same && (spec.kh % 2 == 0 || spec.kw % 2 == 0)) {
    throw ConfigError("conv unit: same padding requires odd kernel extents");
  }
  if (spec.kind == ConvKind::Separable) {
    store.emplace(prefix + "/dw",
                  gaussian_kernel({spec.kh, spec.kw, spec.c_in, 1},
                                  spec.kh * spec.kw, seed, prefix + "/dw"));
    store.emplace(prefix + "/pw",
                  gaussian_kernel({1, 1, spec.c_in, spec.c_out}, spec.c_in, seed,
                                  prefix + "/pw"));
  } else {
    store.emplace(prefix + "/kernel",
                  gaussian_kernel({spec.kh, spec.kw, spec.c_in, spec.c_out},
                                  spec.kh * spec.kw * spec.c_in, seed, prefix + "/kernel"));
  }
  store.emplace(prefix + "/bias", Tensor({1, 1, 1, spec.c_out}, 0.0));
  if (spec.with_bn) {
    store.emplace(prefix + "/bn/gamma", Tensor({1, 1, 1, spec.c_out}, 1.0), true, false);
    store.emplace(prefix + "/bn/beta", Tensor({1, 1, 1, spec.c_out}, 0.0), true, false);
    store.emplace(prefix + "/bn/running_mean", Tensor({1, 1, 1, spec.c_out}, 0.0), false, false);
    store.emplace(prefix + "/bn/running_var", Tensor({1, 1, 1, spec.c_out}, 1.0), false, false);
  }
}

Var conv_unit(Var x, ParamStore& store, const std::string& prefix, const ConvUnitSpec& spec,
              const Mode& mode) {
  Tape& tape = *x.tape();
  Var h = spec.with_relu ? ag::relu(x) : x;
  if (spec.kind == ConvKind::Separable) {
    h = ag::depthwise_conv(h, tape.param(store, prefix + "/dw"), spec.stride, spec.pad);
    h = ag::pointwise_conv(h, tape.param(store, prefix + "/pw"));
  } else {
    h = ag::conv2d(h, tape.param(store, prefix + "/kernel"), spec.stride, spec.pad);
  }
  h = ag::add(h, tape.param(store, prefix + "/bias"));
  if (spec.with_bn) {
    h = ag::batch_norm(h, tape.param(store, prefix + "/bn/gamma"),
                       tape.param(store, prefix + "/bn/beta"),
                       store.at(prefix + "/bn/running_mean"),
                       store.at(prefix + "/bn/running_var"), spec.bn_momentum,
                       spec.bn_epsilon, mode.train);
  }
  return h;
}

std::int64_t conv_unit_param_count(const ConvUnitSpec& spec) {
  std::int64_t count = 0;
  if (spec.kind == ConvKind::Separable) {
    count += std::int64_t(spec.kh) * spec.kw * spec.c_in;          // depthwise
    count += std::int64_t(spec.c_in) * spec.c_out;                 // pointwise
  } else {
    count += std::int64_t(spec.kh) * spec.kw * spec.c_in * spec.c_out;
  }
  count += spec.c_out;                                             // bias
  if (spec.with_bn) count += 2 * std::int64_t(spec.c_out);         // gamma, beta
  return count;
}

}  // namespace inet
