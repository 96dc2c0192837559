#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "sea/common.hpp"
#include "sea/rng.hpp"

namespace sea {

// Dense f64 tensor, row-major, copy-on-op (no views). A Tensor is a cheap
// shared handle; data is immutable after construction except for gradient
// accumulation and explicit parameter updates between steps.
class Tensor {
 public:
  Tensor();  // empty placeholder

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor from(Shape shape, std::vector<double> data);
  static Tensor scalar(double value);
  static Tensor randn(Shape shape, Rng& rng, double stdev = 1.0);
  static Tensor rand_uniform(Shape shape, Rng& rng, double lo, double hi);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  int ndim() const;
  int64_t dim(int i) const;  // negative i counts from the back
  int64_t numel() const;

  const std::vector<double>& data() const;
  std::vector<double>& mutable_data();  // off-tape edits (optimizer steps)
  double at(std::initializer_list<int64_t> idx) const;
  double item() const;  // scalar tensors only

  Tensor& set_requires_grad(bool on);
  bool requires_grad() const;
  const std::vector<double>& grad() const;  // zeros if never touched
  void zero_grad();

  Tensor detach() const;  // same values, no grad participation

  struct Impl;
  const std::shared_ptr<Impl>& impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<Impl> impl_;
  friend Tensor make_tensor(Shape, std::vector<double>);
};

Tensor make_tensor(Shape shape, std::vector<double> data);

// Reverse-mode tape. Forward ops append backward closures while a TapeScope
// is active; backward() replays them once in reverse. One tape per thread.
class Tape {
 public:
  void record(std::function<void()> fn);
  bool recording() const;  // true between scope entry and backward()
  size_t size() const { return entries_.size(); }

  // Seeds d(loss)/d(loss)=1 and accumulates gradients into every
  // requires_grad tensor that participated. Consumes the tape.
  void backward(const Tensor& loss);

 private:
  std::vector<std::function<void()>> entries_;
  bool consumed_ = false;
};

// Sets the thread-local active tape for the lifetime of the scope.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

Tape* active_tape();

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);
Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor silu(const Tensor& a);  // x * sigmoid(x); smooth hidden activation
Tensor recip(const Tensor& a);

// Scales each length-(last dim) row of x by the matching entry of s;
// s.shape must equal x.shape without its last dimension.
Tensor mul_rows(const Tensor& x, const Tensor& s);

// ---- reductions ----
Tensor sum(const Tensor& a, int axis);
Tensor mean(const Tensor& a, int axis);
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
Tensor cumsum(const Tensor& a, int axis);

// ---- shape ----
Tensor reshape(const Tensor& a, Shape new_shape);
Tensor permute(const Tensor& a, const std::vector<int>& perm);
Tensor transpose_last2(const Tensor& a);
Tensor concat_lastdim(const Tensor& a, const Tensor& b);
Tensor select0(const Tensor& a, int64_t i);          // a[i, ...]
Tensor stack0(const std::vector<Tensor>& parts);     // [n, ...]

// ---- contractions ----
// Batched matmul: [..,m,p] x [..,p,n] -> [..,m,n]. Batch dims must match
// elementwise, or b may omit them entirely (shared right-hand operand).
Tensor matmul(const Tensor& a, const Tensor& b);

// Adds b (shape [cols]) to every length-cols row of x.
Tensor add_bias(const Tensor& x, const Tensor& b);

// matmul(x, w) + bias, the affine building block.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// Row softmax over the last dimension, max-subtracted.
Tensor softmax_lastdim(const Tensor& a);

// 2D convolution, cross-correlation semantics, kernel 3x3, zero padding 1.
// x: [C_in,H,W], w: [C_out,C_in,3,3], b: [C_out]. stride pairs permitted:
// (1,1), (s,1), (1,s). causal masks kernel taps that read rows below the
// output row (stride_h must be 1 when causal).
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b,
              int64_t stride_h, int64_t stride_w, bool causal);

// Nearest-neighbor resize along one axis; source index = floor(i*old/new).
Tensor nn_interpolate(const Tensor& a, int64_t new_size, int axis);

// Per-row nearest-neighbor expansion for causal layouts: row t of x[..,T,K]
// is resized to width t+1 inside an [..,T,out_width] output, zeros beyond.
Tensor causal_row_interpolate(const Tensor& a, int64_t out_width);

// Throws NumericError when any value is non-finite.
void assert_finite(const Tensor& a, const char* what);

}  // namespace sea
