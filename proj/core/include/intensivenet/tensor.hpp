#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "intensivenet/errors.hpp"

namespace inet {

/// N×H×W×C extents. All components must stay >= 1.
struct Shape {
  int n = 1;
  int h = 1;
  int w = 1;
  int c = 1;

  std::int64_t count() const {
    return std::int64_t(n) * h * w * c;
  }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

/// Allocator that skips value-initialization on vector resize; buffers
/// handed out this way are fully written by the producing operation.
template <class T>
struct NoInitAlloc : std::allocator<T> {
  using std::allocator<T>::allocator;
  template <class U>
  struct rebind {
    using other = NoInitAlloc<U>;
  };
  template <class U>
  NoInitAlloc(const NoInitAlloc<U>&) noexcept {}
  template <class U>
  void construct(U* p) noexcept {
    ::new (static_cast<void*>(p)) U;
  }
  template <class U, class... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }
};

/// Dense 64-bit tensor in row-major (n, h, w, c) order. Tensors are plain
/// values: copyable, and never mutated by the free functions below.
///
/// Convolution kernels reuse this type with the axes read as
/// (kh, kw, c_in, c_out) for standard kernels, (kh, kw, c, 1) for
/// depthwise kernels and (1, 1, c_in, c_out) for pointwise kernels.
class Tensor {
 public:
  using Buffer = std::vector<double, NoInitAlloc<double>>;

  Tensor() : shape_{1, 1, 1, 1}, data_(1, 0.0) {}
  explicit Tensor(Shape s, double fill = 0.0);
  Tensor(Shape s, std::vector<double> data);

  /// Allocates without clearing; every element must be written before use.
  static Tensor uninit(Shape s);

  const Shape& shape() const { return shape_; }
  std::int64_t size() const { return std::int64_t(data_.size()); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& at(int n, int h, int w, int c) {
    return data_[((std::int64_t(n) * shape_.h + h) * shape_.w + w) * shape_.c + c];
  }
  double at(int n, int h, int w, int c) const {
    return data_[((std::int64_t(n) * shape_.h + h) * shape_.w + w) * shape_.c + c];
  }
  double& operator[](std::int64_t i) { return data_[i]; }
  double operator[](std::int64_t i) const { return data_[i]; }

  /// Releases the storage, leaving an empty husk. Used by the tape to
  /// drop activations once backward has consumed them.
  void release() {
    Buffer().swap(data_);
  }
  bool released() const { return data_.empty() && shape_.count() > 0; }

  bool all_finite() const;

 private:
  Shape shape_;
  Buffer data_;
};

enum class Padding { Same, Valid };

struct Dim2 {
  int h = 1;
  int w = 1;
};

/// Plain row-major matrix used by the im2col lowering and the CTC DP.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c, double fill = 0.0) : rows(r), cols(c), data(std::int64_t(r) * c, fill) {}
  double& at(int r, int c) { return data[std::int64_t(r) * cols + c]; }
  double at(int r, int c) const { return data[std::int64_t(r) * cols + c]; }
};

/// C = A·B (optionally transposing either operand), via BLAS.
Matrix matmul(const Matrix& a, const Matrix& b, bool trans_a = false, bool trans_b = false);

/// Concatenates along the channel axis; input i occupies the contiguous
/// band starting at the sum of the preceding channel counts.
Tensor concat_channels(std::span<const Tensor> inputs);
Tensor concat_channels(std::initializer_list<Tensor> inputs);

/// Inverse of concat_channels for the given band widths (must sum to x.c).
std::vector<Tensor> split_channels(const Tensor& x, std::span<const int> widths);

/// a + b where b either matches a's shape or is a per-channel (1,1,1,c)
/// vector broadcast over n, h, w.
Tensor elementwise_add(const Tensor& a, const Tensor& b);

/// Mean over the selected axes; reduced axes become size 1.
struct Axes {
  bool n = false;
  bool h = false;
  bool w = false;
  bool c = false;
};
Tensor reduce_mean(const Tensor& x, Axes axes);

/// Output spatial size for a convolution. Same padding: ceil(in/stride).
/// Valid padding: floor((in-k)/stride)+1, and throws if k > in.
Dim2 conv_out_size(Dim2 in, Dim2 kernel, Dim2 stride, Padding pad);

/// Leading-edge padding used under Same (floor(total/2); the trailing
/// edge takes the remainder).
Dim2 pad_before(Dim2 in, Dim2 kernel, Dim2 stride, Padding pad);

/// Lowers x to a (n·h_out·w_out) × (kh·kw·c) patch matrix. Row r holds
/// the receptive field of output position r (n-major, then row, then
/// column); columns are ordered (kh, kw, c). Padded reads are 0.
Matrix im2col(const Tensor& x, Dim2 kernel, Dim2 stride, Padding pad);

/// Adjoint of im2col: scatter-adds a patch-matrix back onto an input
/// tensor of shape `xshape`.
Tensor col2im(const Matrix& cols, Shape xshape, Dim2 kernel, Dim2 stride, Padding pad);

}  // namespace inet
