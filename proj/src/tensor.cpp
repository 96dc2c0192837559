#include "sea/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "sea/workcounter.hpp"

namespace sea {

struct Tensor::Impl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // lazily sized
  bool requires_grad = false;

  std::vector<double>& grad_ref() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

namespace {

thread_local Tape* g_tape = nullptr;

bool taping() { return g_tape != nullptr && g_tape->recording(); }

using ImplPtr = std::shared_ptr<Tensor::Impl>;

void check(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

}  // namespace

Tensor make_tensor(Shape shape, std::vector<double> data) {
  auto impl = std::make_shared<Tensor::Impl>();
  if (numel_of(shape) != static_cast<int64_t>(data.size()))
    throw ShapeError("tensor data size " + std::to_string(data.size()) +
                     " does not match shape " + shape_str(shape));
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  return Tensor(std::move(impl));
}

Tensor::Tensor() = default;

Tensor Tensor::zeros(Shape shape) {
  auto n = numel_of(shape);
  return make_tensor(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::full(Shape shape, double value) {
  auto n = numel_of(shape);
  return make_tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::from(Shape shape, std::vector<double> data) {
  return make_tensor(std::move(shape), std::move(data));
}

Tensor Tensor::scalar(double value) { return make_tensor({}, {value}); }

Tensor Tensor::randn(Shape shape, Rng& rng, double stdev) {
  auto n = numel_of(shape);
  std::vector<double> d(n);
  for (auto& v : d) v = rng.normal() * stdev;
  return make_tensor(std::move(shape), std::move(d));
}

Tensor Tensor::rand_uniform(Shape shape, Rng& rng, double lo, double hi) {
  auto n = numel_of(shape);
  std::vector<double> d(n);
  for (auto& v : d) v = rng.uniform(lo, hi);
  return make_tensor(std::move(shape), std::move(d));
}

const Shape& Tensor::shape() const { return impl_->shape; }
int Tensor::ndim() const { return static_cast<int>(impl_->shape.size()); }

int64_t Tensor::dim(int i) const {
  int n = ndim();
  if (i < 0) i += n;
  if (i < 0 || i >= n)
    throw ShapeError("dim index out of range for " + shape_str(shape()));
  return impl_->shape[i];
}

int64_t Tensor::numel() const { return numel_of(impl_->shape); }
const std::vector<double>& Tensor::data() const { return impl_->data; }
std::vector<double>& Tensor::mutable_data() { return impl_->data; }

double Tensor::at(std::initializer_list<int64_t> idx) const {
  check(static_cast<int>(idx.size()) == ndim(), "at(): rank mismatch");
  int64_t off = 0;
  int i = 0;
  for (int64_t v : idx) {
    off = off * impl_->shape[i] + v;
    ++i;
  }
  return impl_->data[off];
}

double Tensor::item() const {
  if (numel() != 1)
    throw ContractError("item() requires a scalar, got " + shape_str(shape()));
  return impl_->data[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  return *this;
}
bool Tensor::requires_grad() const { return impl_->requires_grad; }

const std::vector<double>& Tensor::grad() const {
  return impl_->grad_ref();
}

void Tensor::zero_grad() {
  auto& g = impl_->grad_ref();
  std::fill(g.begin(), g.end(), 0.0);
}

Tensor Tensor::detach() const {
  return make_tensor(impl_->shape, impl_->data);
}

// ---- tape ----

void Tape::record(std::function<void()> fn) {
  if (consumed_)
    throw ContractError("tape already consumed by backward()");
  entries_.push_back(std::move(fn));
}

bool Tape::recording() const { return !consumed_; }

void Tape::backward(const Tensor& loss) {
  if (consumed_) throw ContractError("tape already consumed by backward()");
  if (loss.numel() != 1)
    throw ContractError("backward() requires a scalar loss, got " +
                        shape_str(loss.shape()));
  consumed_ = true;
  loss.impl()->grad_ref()[0] += 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
  entries_.clear();
}

TapeScope::TapeScope(Tape& tape) : prev_(g_tape) { g_tape = &tape; }
TapeScope::~TapeScope() { g_tape = prev_; }

Tape* active_tape() { return g_tape; }

// ---- op helpers ----

namespace {

// Finalizes an op result: marks grad participation and records the backward
// closure when a tape is active and any input requires grad.
Tensor finish(Tensor out, std::initializer_list<Tensor> inputs,
              std::function<void()> backward) {
  if (!taping()) return out;
  bool need = false;
  for (const auto& t : inputs) need = need || t.requires_grad();
  if (!need) return out;
  out.set_requires_grad(true);
  g_tape->record(std::move(backward));
  return out;
}

void accumulate(const ImplPtr& impl, const std::vector<double>& contrib) {
  if (!impl->requires_grad) return;
  auto& g = impl->grad_ref();
  for (size_t i = 0; i < g.size(); ++i) g[i] += contrib[i];
}

}  // namespace

// ---- elementwise ----

namespace {

Tensor binary_op(const Tensor& a, const Tensor& b, const char* name,
                 double (*fwd)(double, double),
                 void (*bwd)(double x, double y, double gy, double& gx_a,
                             double& gx_b)) {
  check(a.shape() == b.shape(), std::string(name) + ": shape mismatch " +
                                    shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
  const auto& ad = a.data();
  const auto& bd = b.data();
  std::vector<double> od(ad.size());
  for (size_t i = 0; i < ad.size(); ++i) od[i] = fwd(ad[i], bd[i]);
  Tensor out = make_tensor(a.shape(), std::move(od));
  auto ai = a.impl(), bi = b.impl(), oi = out.impl();
  return finish(out, {a, b}, [=]() {
    const auto& gy = oi->grad_ref();
    const auto& ax = ai->data;
    const auto& bx = bi->data;
    std::vector<double> ga(ax.size()), gb(bx.size());
    for (size_t i = 0; i < ax.size(); ++i)
      bwd(ax[i], bx[i], gy[i], ga[i], gb[i]);
    accumulate(ai, ga);
    accumulate(bi, gb);
  });
}

Tensor unary_op(const Tensor& a, const char* /*name*/,
                double (*fwd)(double),
                double (*bwd)(double x, double y)) {
  const auto& ad = a.data();
  std::vector<double> od(ad.size());
  for (size_t i = 0; i < ad.size(); ++i) od[i] = fwd(ad[i]);
  Tensor out = make_tensor(a.shape(), std::move(od));
  auto ai = a.impl(), oi = out.impl();
  return finish(out, {a}, [=]() {
    const auto& gy = oi->grad_ref();
    const auto& ax = ai->data;
    const auto& oy = oi->data;
    std::vector<double> ga(ax.size());
    for (size_t i = 0; i < ax.size(); ++i) ga[i] = gy[i] * bwd(ax[i], oy[i]);
    accumulate(ai, ga);
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double, double gy, double& ga, double& gb) {
        ga = gy;
        gb = gy;
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double, double gy, double& ga, double& gb) {
        ga = gy;
        gb = -gy;
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double x, double y, double gy, double& ga, double& gb) {
        ga = gy * y;
        gb = gy * x;
      });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "div", [](double x, double y) { return x / y; },
      [](double x, double y, double gy, double& ga, double& gb) {
        ga = gy / y;
        gb = -gy * x / (y * y);
      });
}

Tensor add_scalar(const Tensor& a, double c) {
  const auto& ad = a.data();
  std::vector<double> od(ad.size());
  for (size_t i = 0; i < ad.size(); ++i) od[i] = ad[i] + c;
  Tensor out = make_tensor(a.shape(), std::move(od));
  auto ai = a.impl(), oi = out.impl();
  return finish(out, {a}, [=]() { accumulate(ai, oi->grad_ref()); });
}

Tensor mul_scalar(const Tensor& a, double c) {
  const auto& ad = a.data();
  std::vector<double> od(ad.size());
  for (size_t i = 0; i < ad.size(); ++i) od[i] = ad[i] * c;
  Tensor out = make_tensor(a.shape(), std::move(od));
  auto ai = a.impl(), oi = out.impl();
  return finish(out, {a}, [=]() {
    const auto& gy = oi->grad_ref();
    std::vector<double> ga(gy.size());
    for (size_t i = 0; i < gy.size(); ++i) ga[i] = gy[i] * c;
    accumulate(ai, ga);
  });
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

Tensor exp(const Tensor& a) {
  return unary_op(
      a, "exp", [](double x) { return std::exp(x); },
      [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary_op(
      a, "log", [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

Tensor sigmoid(const Tensor& a) {
  return unary_op(
      a, "sigmoid",
      [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor silu(const Tensor& a) {
  return unary_op(
      a, "silu",
      [](double x) { return x / (1.0 + std::exp(-x)); },
      [](double x, double) {
        double s = 1.0 / (1.0 + std::exp(-x));
        return s * (1.0 + x * (1.0 - s));
      });
}

Tensor recip(const Tensor& a) {
  return unary_op(
      a, "recip", [](double x) { return 1.0 / x; },
      [](double, double y) { return -y * y; });
}

Tensor mul_rows(const Tensor& x, const Tensor& s) {
  check(x.ndim() >= 1, "mul_rows: x must have rank >= 1");
  Shape expect(x.shape().begin(), x.shape().end() - 1);
  check(s.shape() == expect,
        "mul_rows: scale shape " + shape_str(s.shape()) +
            " does not match row shape " + shape_str(expect) + " of " +
            shape_str(x.shape()));
  int64_t cols = x.dim(-1);
  int64_t rows = s.numel();
  const auto& xd = x.data();
  const auto& sd = s.data();
  std::vector<double> od(xd.size());
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t c = 0; c < cols; ++c) od[r * cols + c] = xd[r * cols + c] * sd[r];
  Tensor out = make_tensor(x.shape(), std::move(od));
  auto xi = x.impl(), si = s.impl(), oi = out.impl();
  return finish(out, {x, s}, [=]() {
    const auto& gy = oi->grad_ref();
    const auto& xd2 = xi->data;
    const auto& sd2 = si->data;
    std::vector<double> gx(xd2.size()), gs(sd2.size(), 0.0);
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t c = 0; c < cols; ++c) {
        gx[r * cols + c] = gy[r * cols + c] * sd2[r];
        gs[r] += gy[r * cols + c] * xd2[r * cols + c];
      }
    accumulate(xi, gx);
    accumulate(si, gs);
  });
}

// ---- reductions ----

namespace {

// Decomposes a shape around `axis` into (outer, n, inner) strides.
void axis_split(const Shape& s, int axis, int64_t& outer, int64_t& n,
                int64_t& inner) {
  int nd = static_cast<int>(s.size());
  if (axis < 0) axis += nd;
  if (axis < 0 || axis >= nd)
    throw ShapeError("axis out of range for " + shape_str(s));
  outer = 1;
  inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[i];
  n = s[axis];
  for (int i = axis + 1; i < nd; ++i) inner *= s[i];
}

int normalize_axis(const Shape& s, int axis) {
  int nd = static_cast<int>(s.size());
  if (axis < 0) axis += nd;
  return axis;
}

}  // namespace

Tensor sum(const Tensor& a, int axis) {
  int64_t outer, n, inner;
  axis_split(a.shape(), axis, outer, n, inner);
  int ax = normalize_axis(a.shape(), axis);
  Shape os = a.shape();
  os.erase(os.begin() + ax);
  const auto& ad = a.data();
  std::vector<double> od(outer * inner, 0.0);
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t j = 0; j < n; ++j)
      for (int64_t i = 0; i < inner; ++i)
        od[o * inner + i] += ad[(o * n + j) * inner + i];
  Tensor out = make_tensor(std::move(os), std::move(od));
  auto ai = a.impl(), oi = out.impl();
  return finish(out, {a}, [=]() {
    const auto& gy = oi->grad_ref();
    std::vector<double> ga(ai->data.size());
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t j = 0; j < n; ++j)
        for (int64_t i = 0; i < inner; ++i)
          ga[(o * n + j) * inner + i] = gy[o * inner + i];
    accumulate(ai, ga);
  });
}

Tensor mean(const Tensor& a, int axis) {
  int64_t n = a.dim(axis);
  return mul_scalar(sum(a, axis), 1.0 / static_cast<double>(n));
}

Tensor sum_all(const Tensor& a) {
  const auto& ad = a.data();
  double s = 0.0;
  for (double v : ad) s += v;
  Tensor out = Tensor::scalar(s);
  auto ai = a.impl(), oi = out.impl();
  return finish(out, {a}, [=]() {
    double gy = oi->grad_ref()[0];
    std::vector<double> ga(ai->data.size(), gy);
    accumulate(ai, ga);
  });
}

Tensor mean_all(const Tensor& a) {
  return mul_scalar(sum_all(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor cumsum(const Tensor& a, int axis) {
  int64_t outer, n, inner;
  axis_split(a.shape(), axis, outer, n, inner);
  const auto& ad = a.data();
  std::vector<double> od(ad.size());
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t i = 0; i < inner; ++i) {
      double run = 0.0;
      for (int64_t j = 0; j < n; ++j) {
        run += ad[(o * n + j) * inner + i];
        od[(o * n + j) * inner + i] = run;
      }
    }
  Tensor out = make_tensor(a.shape(), std::move(od));
  auto ai = a.impl(), oi = out.impl();
  return finish(out, {a}, [=]() {
    const auto& gy = oi->grad_ref();
    std::vector<double> ga(ai->data.size());
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t i = 0; i < inner; ++i) {
        double run = 0.0;
        for (int64_t j = n - 1; j >= 0; --j) {
          run += gy[(o * n + j) * inner + i];
          ga[(o * n + j) * inner + i] = run;
        }
      }
    accumulate(ai, ga);
  });
}

// ---- shape ----

Tensor reshape(const Tensor& a, Shape new_shape) {
  check(numel_of(new_shape) == a.numel(),
        "reshape: cannot view " + shape_str(a.shape()) + " as " +
            shape_str(new_shape));
  Tensor out = make_tensor(std::move(new_shape), a.data());
  auto ai = a.impl(), oi = out.impl();
  return finish(out, {a}, [=]() { accumulate(ai, oi->grad_ref()); });
}

Tensor permute(const Tensor& a, const std::vector<int>& perm) {
  int nd = a.ndim();
  check(static_cast<int>(perm.size()) == nd, "permute: rank mismatch");
  Shape os(nd);
  for (int i = 0; i < nd; ++i) os[i] = a.dim(perm[i]);

  // strides of the input
  std::vector<int64_t> istr(nd, 1);
  for (int i = nd - 2; i >= 0; --i) istr[i] = istr[i + 1] * a.dim(i + 1);
  std::vector<int64_t> gather(nd);
  for (int i = 0; i < nd; ++i) gather[i] = istr[perm[i]];

  const auto& ad = a.data();
  std::vector<double> od(ad.size());
  std::vector<int64_t> idx(nd, 0);
  int64_t n = a.numel();
  for (int64_t flat = 0; flat < n; ++flat) {
    int64_t src = 0;
    for (int i = 0; i < nd; ++i) src += idx[i] * gather[i];
    od[flat] = ad[src];
    for (int i = nd - 1; i >= 0; --i) {
      if (++idx[i] < os[i]) break;
      idx[i] = 0;
    }
  }
  Tensor out = make_tensor(std::move(os), std::move(od));
  auto ai = a.impl(), oi = out.impl();
  Shape oshape = out.shape();
  return finish(out, {a}, [=]() {
    const auto& gy = oi->grad_ref();
    std::vector<double> ga(ai->data.size(), 0.0);
    std::vector<int64_t> ix(nd, 0);
    for (int64_t flat = 0; flat < n; ++flat) {
      int64_t src = 0;
      for (int i = 0; i < nd; ++i) src += ix[i] * gather[i];
      ga[src] += gy[flat];
      for (int i = nd - 1; i >= 0; --i) {
        if (++ix[i] < oshape[i]) break;
        ix[i] = 0;
      }
    }
    accumulate(ai, ga);
  });
}

Tensor transpose_last2(const Tensor& a) {
  int nd = a.ndim();
  check(nd >= 2, "transpose_last2: need rank >= 2");
  std::vector<int> perm(nd);
  for (int i = 0; i < nd; ++i) perm[i] = i;
  std::swap(perm[nd - 1], perm[nd - 2]);
  return permute(a, perm);
}

Tensor concat_lastdim(const Tensor& a, const Tensor& b) {
  check(a.ndim() == b.ndim() && a.ndim() >= 1, "concat: rank mismatch");
  for (int i = 0; i + 1 < a.ndim(); ++i)
    check(a.dim(i) == b.dim(i), "concat: leading dims differ: " +
                                    shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
  int64_t ca = a.dim(-1), cb = b.dim(-1);
  int64_t rows = a.numel() / ca;
  Shape os = a.shape();
  os.back() = ca + cb;
  const auto& ad = a.data();
  const auto& bd = b.data();
  std::vector<double> od(rows * (ca + cb));
  for (int64_t r = 0; r < rows; ++r) {
    std::memcpy(&od[r * (ca + cb)], &ad[r * ca], ca * sizeof(double));
    std::memcpy(&od[r * (ca + cb) + ca], &bd[r * cb], cb * sizeof(double));
  }
  Tensor out = make_tensor(std::move(os), std::move(od));
  auto ai = a.impl(), bi = b.impl(), oi = out.impl();
  return finish(out, {a, b}, [=]() {
    const auto& gy = oi->grad_ref();
    std::vector<double> ga(ai->data.size()), gb(bi->data.size());
    for (int64_t r = 0; r < rows; ++r) {
      std::memcpy(&ga[r * ca], &gy[r * (ca + cb)], ca * sizeof(double));
      std::memcpy(&gb[r * cb], &gy[r * (ca + cb) + ca], cb * sizeof(double));
    }
    accumulate(ai, ga);
    accumulate(bi, gb);
  });
}

Tensor select0(const Tensor& a, int64_t i) {
  check(a.ndim() >= 1, "select0: need rank >= 1");
  int64_t n0 = a.dim(0);
  check(i >= 0 && i < n0, "select0: index out of range");
  Shape os(a.shape().begin() + 1, a.shape().end());
  int64_t stride = a.numel() / n0;
  std::vector<double> od(a.data().begin() + i * stride,
                         a.data().begin() + (i + 1) * stride);
  Tensor out = make_tensor(std::move(os), std::move(od));
  auto ai = a.impl(), oi = out.impl();
  return finish(out, {a}, [=]() {
    const auto& gy = oi->grad_ref();
    std::vector<double> ga(ai->data.size(), 0.0);
    std::memcpy(&ga[i * stride], gy.data(), stride * sizeof(double));
    accumulate(ai, ga);
  });
}

Tensor stack0(const std::vector<Tensor>& parts) {
  check(!parts.empty(), "stack0: no tensors given");
  const Shape& s0 = parts[0].shape();
  for (const auto& p : parts)
    check(p.shape() == s0, "stack0: shapes differ");
  int64_t stride = parts[0].numel();
  Shape os;
  os.push_back(static_cast<int64_t>(parts.size()));
  os.insert(os.end(), s0.begin(), s0.end());
  std::vector<double> od;
  od.reserve(stride * parts.size());
  for (const auto& p : parts)
    od.insert(od.end(), p.data().begin(), p.data().end());
  Tensor out = make_tensor(std::move(os), std::move(od));
  if (!taping()) return out;
  bool need = false;
  for (const auto& p : parts) need = need || p.requires_grad();
  if (!need) return out;
  out.set_requires_grad(true);
  std::vector<ImplPtr> impls;
  for (const auto& p : parts) impls.push_back(p.impl());
  auto oi = out.impl();
  active_tape()->record([=]() {
    const auto& gy = oi->grad_ref();
    for (size_t i = 0; i < impls.size(); ++i) {
      std::vector<double> g(gy.begin() + i * stride,
                            gy.begin() + (i + 1) * stride);
      accumulate(impls[i], g);
    }
  });
  return out;
}

Tensor add_bias(const Tensor& x, const Tensor& b) {
  check(x.ndim() >= 1 && b.ndim() == 1 && b.dim(0) == x.dim(-1),
        "add_bias: bias " + shape_str(b.shape()) + " does not match rows of " +
            shape_str(x.shape()));
  int64_t cols = x.dim(-1);
  int64_t rows = x.numel() / cols;
  const auto& xd = x.data();
  const auto& bd = b.data();
  std::vector<double> od(xd.size());
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t c = 0; c < cols; ++c) od[r * cols + c] = xd[r * cols + c] + bd[c];
  Tensor out = make_tensor(x.shape(), std::move(od));
  auto xi = x.impl(), bi = b.impl(), oi = out.impl();
  return finish(out, {x, b}, [=]() {
    const auto& gy = oi->grad_ref();
    std::vector<double> gb(bi->data.size(), 0.0);
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t c = 0; c < cols; ++c) gb[c] += gy[r * cols + c];
    accumulate(xi, gy);
    accumulate(bi, gb);
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add_bias(matmul(x, w), b);
}

// ---- matmul ----

Tensor matmul(const Tensor& a, const Tensor& b) {
  check(a.ndim() >= 2 && b.ndim() >= 2,
        "matmul: need rank >= 2, got " + shape_str(a.shape()) + " x " +
            shape_str(b.shape()));
  int64_t m = a.dim(-2), p = a.dim(-1);
  int64_t p2 = b.dim(-2), n = b.dim(-1);
  check(p == p2, "matmul: inner dims disagree: " + shape_str(a.shape()) +
                     " x " + shape_str(b.shape()));

  bool shared_b = b.ndim() == 2 && a.ndim() > 2;
  if (!shared_b) {
    check(a.ndim() == b.ndim(), "matmul: batch rank mismatch: " +
                                    shape_str(a.shape()) + " x " +
                                    shape_str(b.shape()));
    for (int i = 0; i + 2 < a.ndim(); ++i)
      check(a.dim(i) == b.dim(i), "matmul: batch dims disagree: " +
                                      shape_str(a.shape()) + " x " +
                                      shape_str(b.shape()));
  }
  int64_t batch = a.numel() / (m * p);
  Shape os(a.shape().begin(), a.shape().end() - 2);
  os.push_back(m);
  os.push_back(n);

  const auto& ad = a.data();
  const auto& bd = b.data();
  std::vector<double> od(batch * m * n, 0.0);
  for (int64_t t = 0; t < batch; ++t) {
    const double* A = &ad[t * m * p];
    const double* B = &bd[shared_b ? 0 : t * p * n];
    double* O = &od[t * m * n];
    for (int64_t i = 0; i < m; ++i)
      for (int64_t kk = 0; kk < p; ++kk) {
        double av = A[i * p + kk];
        const double* brow = &B[kk * n];
        double* orow = &O[i * n];
        for (int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
      }
  }
  WorkCounter::instance().add_macs(
      static_cast<uint64_t>(batch) * m * p * n);

  Tensor out = make_tensor(std::move(os), std::move(od));
  auto ai = a.impl(), bi = b.impl(), oi = out.impl();
  return finish(out, {a, b}, [=]() {
    const auto& gy = oi->grad_ref();
    const auto& A = ai->data;
    const auto& B = bi->data;
    std::vector<double> ga(A.size(), 0.0), gb(B.size(), 0.0);
    for (int64_t t = 0; t < batch; ++t) {
      const double* Gp = &gy[t * m * n];
      const double* Ap = &A[t * m * p];
      const double* Bp = &B[shared_b ? 0 : t * p * n];
      double* gAp = &ga[t * m * p];
      double* gBp = &gb[shared_b ? 0 : t * p * n];
      // dA = dC * B^T
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) {
          double g = Gp[i * n + j];
          for (int64_t kk = 0; kk < p; ++kk)
            gAp[i * p + kk] += g * Bp[kk * n + j];
        }
      // dB = A^T * dC
      for (int64_t kk = 0; kk < p; ++kk)
        for (int64_t i = 0; i < m; ++i) {
          double av = Ap[i * p + kk];
          for (int64_t j = 0; j < n; ++j)
            gBp[kk * n + j] += av * Gp[i * n + j];
        }
    }
    accumulate(ai, ga);
    accumulate(bi, gb);
  });
}

// ---- softmax ----

Tensor softmax_lastdim(const Tensor& a) {
  check(a.ndim() >= 1 && a.dim(-1) >= 1,
        "softmax_lastdim: empty last dimension in " + shape_str(a.shape()));
  int64_t cols = a.dim(-1);
  int64_t rows = a.numel() / cols;
  const auto& ad = a.data();
  std::vector<double> od(ad.size());
  for (int64_t r = 0; r < rows; ++r) {
    const double* x = &ad[r * cols];
    double* y = &od[r * cols];
    double mx = x[0];
    for (int64_t c = 1; c < cols; ++c) mx = std::max(mx, x[c]);
    double denom = 0.0;
    for (int64_t c = 0; c < cols; ++c) {
      y[c] = std::exp(x[c] - mx);
      denom += y[c];
    }
    for (int64_t c = 0; c < cols; ++c) y[c] /= denom;
  }
  WorkCounter::instance().add_macs(static_cast<uint64_t>(rows) * cols);
  Tensor out = make_tensor(a.shape(), std::move(od));
  auto ai = a.impl(), oi = out.impl();
  return finish(out, {a}, [=]() {
    const auto& gy = oi->grad_ref();
    const auto& y = oi->data;
    std::vector<double> ga(y.size());
    for (int64_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (int64_t c = 0; c < cols; ++c) dot += gy[r * cols + c] * y[r * cols + c];
      for (int64_t c = 0; c < cols; ++c)
        ga[r * cols + c] = y[r * cols + c] * (gy[r * cols + c] - dot);
    }
    accumulate(ai, ga);
  });
}

// ---- conv2d ----

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b,
              int64_t stride_h, int64_t stride_w, bool causal) {
  check(x.ndim() == 3, "conv2d: input must be [C,H,W], got " +
                           shape_str(x.shape()));
  check(w.ndim() == 4 && w.dim(2) == 3 && w.dim(3) == 3,
        "conv2d: kernels must be [C_out,C_in,3,3], got " +
            shape_str(w.shape()));
  check(x.dim(0) == w.dim(1),
        "conv2d: channel mismatch: input " + shape_str(x.shape()) +
            " vs kernels " + shape_str(w.shape()));
  check(b.ndim() == 1 && b.dim(0) == w.dim(0), "conv2d: bias shape invalid");
  check((stride_h == 1 || stride_w == 1) && stride_h >= 1 && stride_w >= 1,
        "conv2d: stride must be (1,1), (s,1) or (1,s)");
  if (causal)
    check(stride_h == 1, "conv2d: causal masking requires height stride 1");

  int64_t ci = x.dim(0), ih = x.dim(1), iw = x.dim(2);
  int64_t co = w.dim(0);
  int64_t oh = (ih + 2 - 3) / stride_h + 1;
  int64_t ow = (iw + 2 - 3) / stride_w + 1;

  const auto& xd = x.data();
  const auto& wd = w.data();
  const auto& bd = b.data();
  std::vector<double> od(co * oh * ow);
  uint64_t macs = 0;
  for (int64_t c = 0; c < co; ++c)
    for (int64_t r = 0; r < oh; ++r)
      for (int64_t q = 0; q < ow; ++q) {
        double acc = bd[c];
        for (int64_t cc = 0; cc < ci; ++cc)
          for (int64_t kr = 0; kr < 3; ++kr) {
            if (causal && kr > 1) continue;  // taps below current row
            int64_t rr = r * stride_h - 1 + kr;
            if (rr < 0 || rr >= ih) continue;
            for (int64_t kc = 0; kc < 3; ++kc) {
              int64_t qq = q * stride_w - 1 + kc;
              if (qq < 0 || qq >= iw) continue;
              acc += xd[(cc * ih + rr) * iw + qq] *
                     wd[((c * ci + cc) * 3 + kr) * 3 + kc];
              ++macs;
            }
          }
        od[(c * oh + r) * ow + q] = acc;
      }
  WorkCounter::instance().add_macs(macs);

  Tensor out = make_tensor({co, oh, ow}, std::move(od));
  auto xi = x.impl(), wi = w.impl(), bi2 = b.impl(), oi = out.impl();
  return finish(out, {x, w, b}, [=]() {
    const auto& gy = oi->grad_ref();
    const auto& xd2 = xi->data;
    const auto& wd2 = wi->data;
    std::vector<double> gx(xd2.size(), 0.0), gw(wd2.size(), 0.0),
        gb(bi2->data.size(), 0.0);
    for (int64_t c = 0; c < co; ++c)
      for (int64_t r = 0; r < oh; ++r)
        for (int64_t q = 0; q < ow; ++q) {
          double g = gy[(c * oh + r) * ow + q];
          gb[c] += g;
          for (int64_t cc = 0; cc < ci; ++cc)
            for (int64_t kr = 0; kr < 3; ++kr) {
              if (causal && kr > 1) continue;
              int64_t rr = r * stride_h - 1 + kr;
              if (rr < 0 || rr >= ih) continue;
              for (int64_t kc = 0; kc < 3; ++kc) {
                int64_t qq = q * stride_w - 1 + kc;
                if (qq < 0 || qq >= iw) continue;
                gx[(cc * ih + rr) * iw + qq] +=
                    g * wd2[((c * ci + cc) * 3 + kr) * 3 + kc];
                gw[((c * ci + cc) * 3 + kr) * 3 + kc] +=
                    g * xd2[(cc * ih + rr) * iw + qq];
              }
            }
        }
    accumulate(xi, gx);
    accumulate(wi, gw);
    accumulate(bi2, gb);
  });
}

// ---- interpolation ----

Tensor nn_interpolate(const Tensor& a, int64_t new_size, int axis) {
  check(new_size >= 1, "nn_interpolate: new_size must be >= 1");
  int64_t outer, n, inner;
  axis_split(a.shape(), axis, outer, n, inner);
  int ax = normalize_axis(a.shape(), axis);
  Shape os = a.shape();
  os[ax] = new_size;
  const auto& ad = a.data();
  std::vector<double> od(outer * new_size * inner);
  std::vector<int64_t> src(new_size);
  for (int64_t i = 0; i < new_size; ++i) src[i] = (i * n) / new_size;
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t i = 0; i < new_size; ++i)
      std::memcpy(&od[(o * new_size + i) * inner],
                  &ad[(o * n + src[i]) * inner], inner * sizeof(double));
  Tensor out = make_tensor(std::move(os), std::move(od));
  auto ai = a.impl(), oi = out.impl();
  return finish(out, {a}, [=]() {
    const auto& gy = oi->grad_ref();
    std::vector<double> ga(ai->data.size(), 0.0);
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t i = 0; i < new_size; ++i)
        for (int64_t j = 0; j < inner; ++j)
          ga[(o * n + src[i]) * inner + j] += gy[(o * new_size + i) * inner + j];
    accumulate(ai, ga);
  });
}

Tensor causal_row_interpolate(const Tensor& a, int64_t out_width) {
  check(a.ndim() >= 2, "causal_row_interpolate: need rank >= 2");
  int64_t K = a.dim(-1), T = a.dim(-2);
  check(out_width >= T, "causal_row_interpolate: out_width must be >= T");
  int64_t outer = a.numel() / (T * K);
  Shape os = a.shape();
  os.back() = out_width;
  const auto& ad = a.data();
  std::vector<double> od(outer * T * out_width, 0.0);
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t t = 0; t < T; ++t) {
      int64_t width = t + 1;  // row t sees keys [0, t]
      const double* row = &ad[(o * T + t) * K];
      double* orow = &od[(o * T + t) * out_width];
      for (int64_t c = 0; c < width; ++c) orow[c] = row[(c * K) / width];
    }
  Tensor out = make_tensor(std::move(os), std::move(od));
  auto ai = a.impl(), oi = out.impl();
  return finish(out, {a}, [=]() {
    const auto& gy = oi->grad_ref();
    std::vector<double> ga(ai->data.size(), 0.0);
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t t = 0; t < T; ++t) {
        int64_t width = t + 1;
        for (int64_t c = 0; c < width; ++c)
          ga[(o * T + t) * K + (c * K) / width] +=
              gy[(o * T + t) * out_width + c];
      }
    accumulate(ai, ga);
  });
}

void assert_finite(const Tensor& a, const char* what) {
  for (double v : a.data())
    if (!std::isfinite(v))
      throw NumericError(std::string("non-finite value in ") + what);
}

}  // namespace sea
