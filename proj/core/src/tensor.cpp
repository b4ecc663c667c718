#include "intensivenet/tensor.hpp"

#include <cblas.h>

#include <cmath>
#include <sstream>

namespace inet {

namespace {

void check_positive(const Shape& s) {
  if (s.n < 1 || s.h < 1 || s.w < 1 || s.c < 1) {
    throw DimensionError("shape components must be >= 1, got " + s.str());
  }
}

}  // namespace

std::string Shape::str() const {
  std::ostringstream os;
  os << "(" << n << "," << h << "," << w << "," << c << ")";
  return os.str();
}

Tensor::Tensor(Shape s, double fill) : shape_(s) {
  check_positive(s);
  data_.assign(std::size_t(s.count()), fill);
}

Tensor::Tensor(Shape s, std::vector<double> data) : shape_(s) {
  check_positive(s);
  if (std::int64_t(data.size()) != s.count()) {
    throw DimensionError("data length " + std::to_string(data.size()) +
                         " does not match shape " + s.str());
  }
  data_.assign(data.begin(), data.end());
}

Tensor Tensor::uninit(Shape s) {
  check_positive(s);
  Tensor t;
  t.shape_ = s;
  t.data_.resize(std::size_t(s.count()));
  return t;
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Matrix matmul(const Matrix& a, const Matrix& b, bool trans_a, bool trans_b) {
  const int m = trans_a ? a.cols : a.rows;
  const int k = trans_a ? a.rows : a.cols;
  const int kb = trans_b ? b.cols : b.rows;
  const int n = trans_b ? b.rows : b.cols;
  if (k != kb) {
    throw DimensionError("matmul inner dimensions differ: " + std::to_string(k) +
                         " vs " + std::to_string(kb));
  }
  Matrix c(m, n);
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, 1.0, a.data.data(),
              a.cols, b.data.data(), b.cols, 0.0, c.data.data(), n);
  return c;
}

Tensor concat_channels(std::span<const Tensor> inputs) {
  if (inputs.empty()) {
    throw ContractError("concat_channels: empty input list");
  }
  const Shape& first = inputs[0].shape();
  int total_c = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Shape& s = inputs[i].shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w) {
      throw DimensionError("concat_channels: input " + std::to_string(i) + " has shape " +
                           s.str() + ", incompatible with " + first.str());
    }
    total_c += s.c;
  }
  Tensor out = Tensor::uninit({first.n, first.h, first.w, total_c});
  const std::int64_t positions = std::int64_t(first.n) * first.h * first.w;
  for (std::int64_t p = 0; p < positions; ++p) {
    double* dst = out.data() + p * total_c;
    for (const Tensor& in : inputs) {
      const int c = in.shape().c;
      const double* src = in.data() + p * c;
      for (int j = 0; j < c; ++j) dst[j] = src[j];
      dst += c;
    }
  }
  return out;
}

Tensor concat_channels(std::initializer_list<Tensor> inputs) {
  return concat_channels(std::span<const Tensor>(inputs.begin(), inputs.size()));
}

std::vector<Tensor> split_channels(const Tensor& x, std::span<const int> widths) {
  int total = 0;
  for (int w : widths) {
    if (w < 1) throw DimensionError("split_channels: band width must be >= 1");
    total += w;
  }
  const Shape& s = x.shape();
  if (total != s.c) {
    throw DimensionError("split_channels: widths sum to " + std::to_string(total) +
                         " but tensor has " + std::to_string(s.c) + " channels");
  }
  std::vector<Tensor> out;
  out.reserve(widths.size());
  const std::int64_t positions = std::int64_t(s.n) * s.h * s.w;
  int offset = 0;
  for (int w : widths) {
    Tensor band = Tensor::uninit({s.n, s.h, s.w, w});
    for (std::int64_t p = 0; p < positions; ++p) {
      const double* src = x.data() + p * s.c + offset;
      double* dst = band.data() + p * w;
      for (int j = 0; j < w; ++j) dst[j] = src[j];
    }
    offset += w;
    out.push_back(std::move(band));
  }
  return out;
}

Tensor elementwise_add(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa == sb) {
    Tensor out = a;
    const double* pb = b.data();
    double* po = out.data();
    const std::int64_t n = out.size();
    for (std::int64_t i = 0; i < n; ++i) po[i] += pb[i];
    return out;
  }
  if (sb.n == 1 && sb.h == 1 && sb.w == 1 && sb.c == sa.c) {
    Tensor out = a;
    const double* pb = b.data();
    double* po = out.data();
    const std::int64_t positions = std::int64_t(sa.n) * sa.h * sa.w;
    for (std::int64_t p = 0; p < positions; ++p) {
      double* row = po + p * sa.c;
      for (int j = 0; j < sa.c; ++j) row[j] += pb[j];
    }
    return out;
  }
  throw DimensionError("elementwise_add: incompatible shapes " + sa.str() + " and " + sb.str());
}

Tensor reduce_mean(const Tensor& x, Axes axes) {
  const Shape& s = x.shape();
  Shape os{axes.n ? 1 : s.n, axes.h ? 1 : s.h, axes.w ? 1 : s.w, axes.c ? 1 : s.c};
  Tensor out(os, 0.0);
  for (int n = 0; n < s.n; ++n) {
    for (int h = 0; h < s.h; ++h) {
      for (int w = 0; w < s.w; ++w) {
        for (int c = 0; c < s.c; ++c) {
          out.at(axes.n ? 0 : n, axes.h ? 0 : h, axes.w ? 0 : w, axes.c ? 0 : c) +=
              x.at(n, h, w, c);
        }
      }
    }
  }
  const double denom = double(s.count()) / double(os.count());
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] /= denom;
  return out;
}

namespace {

int out_extent(int in, int k, int stride, Padding pad) {
  if (pad == Padding::Same) {
    return (in + stride - 1) / stride;
  }
  if (k > in) {
    throw DimensionError("valid padding: kernel extent " + std::to_string(k) +
                         " exceeds input extent " + std::to_string(in));
  }
  return (in - k) / stride + 1;
}

int before_extent(int in, int k, int stride, Padding pad) {
  if (pad == Padding::Valid) return 0;
  const int out = (in + stride - 1) / stride;
  const int total = std::max((out - 1) * stride + k - in, 0);
  return total / 2;  // floor on the leading edge
}

}  // namespace

Dim2 conv_out_size(Dim2 in, Dim2 kernel, Dim2 stride, Padding pad) {
  return {out_extent(in.h, kernel.h, stride.h, pad), out_extent(in.w, kernel.w, stride.w, pad)};
}

Dim2 pad_before(Dim2 in, Dim2 kernel, Dim2 stride, Padding pad) {
  return {before_extent(in.h, kernel.h, stride.h, pad),
          before_extent(in.w, kernel.w, stride.w, pad)};
}

Matrix im2col(const Tensor& x, Dim2 kernel, Dim2 stride, Padding pad) {
  const Shape& s = x.shape();
  const Dim2 out = conv_out_size({s.h, s.w}, kernel, stride, pad);
  const Dim2 before = pad_before({s.h, s.w}, kernel, stride, pad);
  Matrix cols(s.n * out.h * out.w, kernel.h * kernel.w * s.c);
  std::int64_t row = 0;
  for (int n = 0; n < s.n; ++n) {
    for (int oh = 0; oh < out.h; ++oh) {
      for (int ow = 0; ow < out.w; ++ow, ++row) {
        double* dst = cols.data.data() + row * cols.cols;
        for (int kh = 0; kh < kernel.h; ++kh) {
          const int ih = oh * stride.h - before.h + kh;
          for (int kw = 0; kw < kernel.w; ++kw, dst += s.c) {
            const int iw = ow * stride.w - before.w + kw;
            if (ih < 0 || ih >= s.h || iw < 0 || iw >= s.w) continue;  // stays 0
            const double* src =
                x.data() + ((std::int64_t(n) * s.h + ih) * s.w + iw) * s.c;
            for (int c = 0; c < s.c; ++c) dst[c] = src[c];
          }
        }
      }
    }
  }
  return cols;
}

Tensor col2im(const Matrix& cols, Shape xshape, Dim2 kernel, Dim2 stride, Padding pad) {
  const Dim2 out = conv_out_size({xshape.h, xshape.w}, kernel, stride, pad);
  const Dim2 before = pad_before({xshape.h, xshape.w}, kernel, stride, pad);
  if (cols.rows != xshape.n * out.h * out.w || cols.cols != kernel.h * kernel.w * xshape.c) {
    throw DimensionError("col2im: patch matrix does not match target geometry");
  }
  Tensor x(xshape, 0.0);
  std::int64_t row = 0;
  for (int n = 0; n < xshape.n; ++n) {
    for (int oh = 0; oh < out.h; ++oh) {
      for (int ow = 0; ow < out.w; ++ow, ++row) {
        const double* src = cols.data.data() + row * cols.cols;
        for (int kh = 0; kh < kernel.h; ++kh) {
          const int ih = oh * stride.h - before.h + kh;
          for (int kw = 0; kw < kernel.w; ++kw, src += xshape.c) {
            const int iw = ow * stride.w - before.w + kw;
            if (ih < 0 || ih >= xshape.h || iw < 0 || iw >= xshape.w) continue;
            double* dst =
                x.data() + ((std::int64_t(n) * xshape.h + ih) * xshape.w + iw) * xshape.c;
            for (int c = 0; c < xshape.c; ++c) dst[c] += src[c];
          }
        }
      }
    }
  }
  return x;
}

}  // namespace inet
