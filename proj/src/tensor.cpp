#include "vloc/tensor.hpp"

#include <Eigen/Dense>

#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "vloc/error.hpp"

namespace vloc {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

std::atomic<std::uint64_t> g_next_epoch{1};
thread_local Tape* g_current_tape = nullptr;

[[noreturn]] void shape_mismatch(std::string_view op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " +
                   shape_string(b));
}

[[noreturn]] void bad_shape(std::string_view op, const Shape& s, std::string_view expected) {
  throw ShapeError(std::string(op) + ": expected " + std::string(expected) + ", got " +
                   shape_string(s));
}

Tensor make_output(std::string_view op, Shape shape, std::vector<double> values) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw NumericalError(std::string(op) + ": produced a non-finite value");
    }
  }
  return Tensor(std::move(shape), std::move(values));
}

Tape* recording_tape(std::initializer_list<const Tensor*> inputs) {
  Tape* tape = Tape::current();
  if (tape == nullptr) return nullptr;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return tape;
  }
  return nullptr;
}

// Gradient buffer of an input, or nullptr when it does not take gradients.
double* grad_target(const NodePtr& n) {
  if (!n->requires_grad) return nullptr;
  n->ensure_grad();
  return n->grad.data();
}

void require_same_shape(std::string_view op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_mismatch(op, a.shape(), b.shape());
}

template <typename Forward, typename Derivative>
Tensor unary_op(std::string_view op, const Tensor& a, Forward f, Derivative df) {
  const auto x = a.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  Tensor result = make_output(op, a.shape(), std::move(out));
  if (Tape* tape = recording_tape({&a})) {
    tape->record(op, {a.node()}, result.node(),
                 [an = a.node(), df](const Node& o) {
                   double* ga = grad_target(an);
                   if (!ga) return;
                   for (std::size_t i = 0; i < o.grad.size(); ++i) {
                     ga[i] += o.grad[i] * df(an->value[i], o.value[i]);
                   }
                 });
  }
  return result;
}

struct ConvGeometry {
  std::size_t n, c, h, w, o, kh, kw, stride, pad, ho, wo;
  std::size_t k() const { return c * kh * kw; }
  std::size_t p() const { return ho * wo; }
  bool direct() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

void im2col(const ConvGeometry& g, const double* x, double* col) {
  // col is [c*kh*kw, ho*wo]
  for (std::size_t ci = 0; ci < g.c; ++ci) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        double* row = col + ((ci * g.kh + ki) * g.kw + kj) * g.p();
        for (std::size_t oi = 0; oi < g.ho; ++oi) {
          const long yi = static_cast<long>(oi * g.stride + ki) - static_cast<long>(g.pad);
          for (std::size_t oj = 0; oj < g.wo; ++oj) {
            const long xj = static_cast<long>(oj * g.stride + kj) - static_cast<long>(g.pad);
            double v = 0.0;
            if (yi >= 0 && yi < static_cast<long>(g.h) && xj >= 0 && xj < static_cast<long>(g.w)) {
              v = x[(ci * g.h + static_cast<std::size_t>(yi)) * g.w + static_cast<std::size_t>(xj)];
            }
            row[oi * g.wo + oj] = v;
          }
        }
      }
    }
  }
}

void col2im_add(const ConvGeometry& g, const double* col, double* dx) {
  for (std::size_t ci = 0; ci < g.c; ++ci) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const double* row = col + ((ci * g.kh + ki) * g.kw + kj) * g.p();
        for (std::size_t oi = 0; oi < g.ho; ++oi) {
          const long yi = static_cast<long>(oi * g.stride + ki) - static_cast<long>(g.pad);
          if (yi < 0 || yi >= static_cast<long>(g.h)) continue;
          for (std::size_t oj = 0; oj < g.wo; ++oj) {
            const long xj = static_cast<long>(oj * g.stride + kj) - static_cast<long>(g.pad);
            if (xj < 0 || xj >= static_cast<long>(g.w)) continue;
            dx[(ci * g.h + static_cast<std::size_t>(yi)) * g.w + static_cast<std::size_t>(xj)] +=
                row[oi * g.wo + oj];
          }
        }
      }
    }
  }
}

// Jacobian rows of the Hamilton product out = a * b with respect to a
// (right-multiplication matrix of b) and to b (left-multiplication of a).
void quat_right_matrix(const double* b, double m[16]) {
  const double w = b[0], x = b[1], y = b[2], z = b[3];
  const double r[16] = {w, -x, -y, -z,  //
                        x, w,  z,  -y,  //
                        y, -z, w,  x,   //
                        z, y,  -x, w};
  std::copy(r, r + 16, m);
}

void quat_left_matrix(const double* a, double m[16]) {
  const double w = a[0], x = a[1], y = a[2], z = a[3];
  const double l[16] = {w, -x, -y, -z,  //
                        x, w,  -z, y,   //
                        y, z,  w,  -x,  //
                        z, -y, x,  w};
  std::copy(l, l + 16, m);
}

}  // namespace

// ---------------------------------------------------------------------------

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("tensor: zero extent in shape " + shape_string(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("tensor: shape " + shape_string(shape) + " holds " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  node_ = std::make_shared<Node>();
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const {
  if (!node_) throw Error("tensor: undefined");
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) {
    throw ShapeError("tensor: axis " + std::to_string(axis) + " out of range for " +
                     shape_string(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

std::span<const double> Tensor::data() const {
  if (!node_) throw Error("tensor: undefined");
  return node_->value;
}

std::span<double> Tensor::mutable_data() {
  if (!node_) throw Error("tensor: undefined");
  return node_->value;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item: tensor of shape " + shape_string(shape()));
  return node_->value[0];
}

double Tensor::at(std::size_t i) const { return data()[i]; }

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool flag) {
  if (!node_) throw Error("tensor: undefined");
  if (!node_->leaf) throw Error("set_requires_grad: only leaves can change this flag");
  node_->requires_grad = flag;
}

bool Tensor::is_leaf() const { return node_ && node_->leaf; }

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!node_) throw Error("tensor: undefined");
  return node_->grad;
}

std::span<double> Tensor::mutable_grad() {
  if (!node_) throw Error("tensor: undefined");
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_ && !node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::clone() const { return Tensor(shape(), node_->value, node_->requires_grad); }

Tensor Tensor::detach() const { return Tensor(shape(), node_->value, false); }

// ---------------------------------------------------------------------------

Tape::Tape() : epoch_(g_next_epoch.fetch_add(1)) {}

Tape::~Tape() {
  if (g_current_tape == this) g_current_tape = nullptr;
}

void Tape::record(std::string_view op, std::vector<NodePtr> inputs, const NodePtr& output,
                  BackwardFn fn) {
  output->leaf = false;
  output->requires_grad = true;
  output->recorded_on = epoch_;
  entries_.push_back(Entry{op, std::move(inputs), output, std::move(fn)});
}

void Tape::clear() {
  entries_.clear();
  epoch_ = g_next_epoch.fetch_add(1);
}

Tape* Tape::current() noexcept { return g_current_tape; }

std::vector<Tensor> Tape::backward(const Tensor& root) {
  if (!root.defined()) throw Error("backward: undefined root");
  if (root.numel() != 1) {
    throw ShapeError("backward: root must be a scalar, got shape " + shape_string(root.shape()));
  }
  const NodePtr& rn = root.node();
  if (!rn->requires_grad) {
    clear();
    return {};
  }
  if (rn->leaf) {
    rn->ensure_grad();
    rn->grad[0] += 1.0;
    clear();
    return {root};
  }
  if (rn->recorded_on != epoch_) {
    throw Error("backward: root was not produced on this tape (no forward pass recorded)");
  }

  rn->ensure_grad();
  rn->grad[0] += 1.0;

  std::vector<Tensor> leaves;
  std::unordered_set<const Node*> seen;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->output->grad.empty()) continue;
    it->fn(*it->output);
    for (const NodePtr& in : it->inputs) {
      if (in->leaf && in->requires_grad && seen.insert(in.get()).second) {
        leaves.emplace_back(in);
      }
    }
  }
  clear();
  return leaves;
}

TapeScope::TapeScope(Tape& tape) : previous_(g_current_tape) { g_current_tape = &tape; }

TapeScope::~TapeScope() { g_current_tape = previous_; }

std::vector<Tensor> backward(const Tensor& root) {
  Tape* tape = Tape::current();
  if (tape == nullptr) {
    if (!root.requires_grad()) return {};
    throw Error("backward: no active tape");
  }
  return tape->backward(root);
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  const auto x = a.data();
  const auto y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
  Tensor result = make_output("add", a.shape(), std::move(out));
  if (Tape* tape = recording_tape({&a, &b})) {
    tape->record("add", {a.node(), b.node()}, result.node(),
                 [an = a.node(), bn = b.node()](const Node& o) {
                   if (double* g = grad_target(an))
                     for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
                   if (double* g = grad_target(bn))
                     for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
                 });
  }
  return result;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  const auto x = a.data();
  const auto y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i];
  Tensor result = make_output("sub", a.shape(), std::move(out));
  if (Tape* tape = recording_tape({&a, &b})) {
    tape->record("sub", {a.node(), b.node()}, result.node(),
                 [an = a.node(), bn = b.node()](const Node& o) {
                   if (double* g = grad_target(an))
                     for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
                   if (double* g = grad_target(bn))
                     for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] -= o.grad[i];
                 });
  }
  return result;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  const auto x = a.data();
  const auto y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  Tensor result = make_output("mul", a.shape(), std::move(out));
  if (Tape* tape = recording_tape({&a, &b})) {
    tape->record("mul", {a.node(), b.node()}, result.node(),
                 [an = a.node(), bn = b.node()](const Node& o) {
                   if (double* g = grad_target(an))
                     for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * bn->value[i];
                   if (double* g = grad_target(bn))
                     for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * an->value[i];
                 });
  }
  return result;
}

Tensor scale(const Tensor& a, double factor) {
  return unary_op(
      "scale", a, [factor](double x) { return factor * x; },
      [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
  return unary_op(
      "add_scalar", a, [value](double x) { return x + value; },
      [](double, double) { return 1.0; });
}

Tensor square(const Tensor& a) {
  return unary_op(
      "square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor exp(const Tensor& a) {
  return unary_op(
      "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor sqrt(const Tensor& a) {
  return unary_op(
      "sqrt", a, [](double x) { return std::sqrt(x); },
      [](double, double y) { return 0.5 / y; });
}

Tensor elu(const Tensor& a, double alpha) {
  return unary_op(
      "elu", a, [alpha](double x) { return x > 0.0 ? x : alpha * std::expm1(x); },
      [alpha](double x, double) { return x > 0.0 ? 1.0 : alpha * std::exp(x); });
}

Tensor relu(const Tensor& a) {
  return unary_op(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  Tensor result = make_output("sum", {1}, {total});
  if (Tape* tape = recording_tape({&a})) {
    tape->record("sum", {a.node()}, result.node(), [an = a.node()](const Node& o) {
      if (double* g = grad_target(an))
        for (std::size_t i = 0; i < an->value.size(); ++i) g[i] += o.grad[0];
    });
  }
  return result;
}

Tensor mean(const Tensor& a) {
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    shape_mismatch("matmul", a.shape(), b.shape());
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n);
  MutMap(out.data(), m, n).noalias() = ConstMap(a.data().data(), m, k) * ConstMap(b.data().data(), k, n);
  Tensor result = make_output("matmul", {m, n}, std::move(out));
  if (Tape* tape = recording_tape({&a, &b})) {
    tape->record("matmul", {a.node(), b.node()}, result.node(),
                 [an = a.node(), bn = b.node(), m, k, n](const Node& o) {
                   ConstMap go(o.grad.data(), m, n);
                   if (double* g = grad_target(an))
                     MutMap(g, m, k).noalias() += go * ConstMap(bn->value.data(), k, n).transpose();
                   if (double* g = grad_target(bn))
                     MutMap(g, k, n).noalias() += ConstMap(an->value.data(), m, k).transpose() * go;
                 });
  }
  return result;
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (x.rank() != 2 || bias.rank() != 1 || x.dim(1) != bias.dim(0)) {
    shape_mismatch("add_bias", x.shape(), bias.shape());
  }
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  const auto xv = x.data();
  const auto bv = bias.data();
  std::vector<double> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = xv[r * cols + c] + bv[c];
  Tensor result = make_output("add_bias", x.shape(), std::move(out));
  if (Tape* tape = recording_tape({&x, &bias})) {
    tape->record("add_bias", {x.node(), bias.node()}, result.node(),
                 [xn = x.node(), bn = bias.node(), rows, cols](const Node& o) {
                   if (double* g = grad_target(xn))
                     for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
                   if (double* g = grad_target(bn))
                     for (std::size_t r = 0; r < rows; ++r)
                       for (std::size_t c = 0; c < cols; ++c) g[c] += o.grad[r * cols + c];
                 });
  }
  return result;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  return add_bias(matmul(x, weight), bias);
}

// ---------------------------------------------------------------------------
// Convolutional primitives

Tensor conv2d(const Tensor& x, const Tensor& weight, Conv2dOptions options) {
  if (x.rank() != 4) bad_shape("conv2d", x.shape(), "input [N,C,H,W]");
  if (weight.rank() != 4) bad_shape("conv2d", weight.shape(), "weight [O,C,kh,kw]");
  if (weight.dim(1) != x.dim(1)) shape_mismatch("conv2d", x.shape(), weight.shape());
  if (options.stride == 0) throw ShapeError("conv2d: stride must be positive");

  ConvGeometry g{};
  g.n = x.dim(0);
  g.c = x.dim(1);
  g.h = x.dim(2);
  g.w = x.dim(3);
  g.o = weight.dim(0);
  g.kh = weight.dim(2);
  g.kw = weight.dim(3);
  g.stride = options.stride;
  if (options.padding == Padding::Same) {
    if (g.kh % 2 == 0 || g.kw != g.kh) {
      throw ShapeError("conv2d: same padding needs square odd kernels, got " +
                       shape_string(weight.shape()));
    }
    g.pad = (g.kh - 1) / 2;
  } else {
    g.pad = 0;
  }
  if (g.h + 2 * g.pad < g.kh || g.w + 2 * g.pad < g.kw) {
    shape_mismatch("conv2d", x.shape(), weight.shape());
  }
  g.ho = (g.h + 2 * g.pad - g.kh) / g.stride + 1;
  g.wo = (g.w + 2 * g.pad - g.kw) / g.stride + 1;

  const std::size_t in_size = g.c * g.h * g.w;
  const std::size_t out_size = g.o * g.p();
  const double* xv = x.data().data();
  ConstMap wmat(weight.data().data(), g.o, g.k());

  // Columns are kept for the backward pass unless the conv is a plain 1x1.
  auto cols = std::make_shared<std::vector<double>>();
  if (!g.direct()) cols->resize(g.n * g.k() * g.p());

  std::vector<double> out(g.n * out_size);
  for (std::size_t s = 0; s < g.n; ++s) {
    const double* col;
    if (g.direct()) {
      col = xv + s * in_size;
    } else {
      double* dst = cols->data() + s * g.k() * g.p();
      im2col(g, xv + s * in_size, dst);
      col = dst;
    }
    MutMap(out.data() + s * out_size, g.o, g.p()).noalias() = wmat * ConstMap(col, g.k(), g.p());
  }
  Tensor result = make_output("conv2d", {g.n, g.o, g.ho, g.wo}, std::move(out));

  if (Tape* tape = recording_tape({&x, &weight})) {
    tape->record("conv2d", {x.node(), weight.node()}, result.node(),
                 [xn = x.node(), wn = weight.node(), g, cols, in_size, out_size](const Node& o) {
                   double* gx = grad_target(xn);
                   double* gw = grad_target(wn);
                   ConstMap wmat(wn->value.data(), g.o, g.k());
                   std::vector<double> dcol(gx && !g.direct() ? g.k() * g.p() : 0);
                   for (std::size_t s = 0; s < g.n; ++s) {
                     ConstMap gout(o.grad.data() + s * out_size, g.o, g.p());
                     const double* col = g.direct() ? xn->value.data() + s * in_size
                                                    : cols->data() + s * g.k() * g.p();
                     if (gw) MutMap(gw, g.o, g.k()).noalias() += gout * ConstMap(col, g.k(), g.p()).transpose();
                     if (gx) {
                       if (g.direct()) {
                         MutMap(gx + s * in_size, g.k(), g.p()).noalias() += wmat.transpose() * gout;
                       } else {
                         MutMap(dcol.data(), g.k(), g.p()).noalias() = wmat.transpose() * gout;
                         col2im_add(g, dcol.data(), gx + s * in_size);
                       }
                     }
                   }
                 });
  }
  return result;
}

Tensor channel_affine(const Tensor& x, const Tensor& scale_t, const Tensor& bias) {
  if (x.rank() != 4 && x.rank() != 2) bad_shape("channel_affine", x.shape(), "rank 2 or 4");
  const std::size_t n = x.dim(0), c = x.dim(1);
  const std::size_t hw = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
  if (scale_t.shape() != Shape{c}) shape_mismatch("channel_affine", x.shape(), scale_t.shape());
  if (bias.shape() != Shape{c}) shape_mismatch("channel_affine", x.shape(), bias.shape());

  const auto xv = x.data();
  const auto sv = scale_t.data();
  const auto bv = bias.data();
  std::vector<double> out(xv.size());
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t base = (s * c + ch) * hw;
      for (std::size_t i = 0; i < hw; ++i) out[base + i] = xv[base + i] * sv[ch] + bv[ch];
    }
  Tensor result = make_output("channel_affine", x.shape(), std::move(out));
  if (Tape* tape = recording_tape({&x, &scale_t, &bias})) {
    tape->record("channel_affine", {x.node(), scale_t.node(), bias.node()}, result.node(),
                 [xn = x.node(), sn = scale_t.node(), bn = bias.node(), n, c, hw](const Node& o) {
                   double* gx = grad_target(xn);
                   double* gs = grad_target(sn);
                   double* gb = grad_target(bn);
                   for (std::size_t s = 0; s < n; ++s)
                     for (std::size_t ch = 0; ch < c; ++ch) {
                       const std::size_t base = (s * c + ch) * hw;
                       double ds = 0.0, db = 0.0;
                       for (std::size_t i = 0; i < hw; ++i) {
                         const double go = o.grad[base + i];
                         ds += go * xn->value[base + i];
                         db += go;
                         if (gx) gx[base + i] += go * sn->value[ch];
                       }
                       if (gs) gs[ch] += ds;
                       if (gb) gb[ch] += db;
                     }
                 });
  }
  return result;
}

Tensor global_avg_pool(const Tensor& x) {
  if (x.rank() != 4) bad_shape("global_avg_pool", x.shape(), "input [N,C,H,W]");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  const auto xv = x.data();
  std::vector<double> out(n * c);
  for (std::size_t i = 0; i < n * c; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < hw; ++j) acc += xv[i * hw + j];
    out[i] = acc / static_cast<double>(hw);
  }
  Tensor result = make_output("global_avg_pool", {n, c}, std::move(out));
  if (Tape* tape = recording_tape({&x})) {
    tape->record("global_avg_pool", {x.node()}, result.node(), [xn = x.node(), n, c, hw](const Node& o) {
      double* gx = grad_target(xn);
      if (!gx) return;
      const double inv = 1.0 / static_cast<double>(hw);
      for (std::size_t i = 0; i < n * c; ++i)
        for (std::size_t j = 0; j < hw; ++j) gx[i * hw + j] += o.grad[i] * inv;
    });
  }
  return result;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.rank() != b.rank() || (a.rank() != 2 && a.rank() != 4) || a.dim(0) != b.dim(0)) {
    shape_mismatch("concat_channels", a.shape(), b.shape());
  }
  if (a.rank() == 4 && (a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))) {
    shape_mismatch("concat_channels", a.shape(), b.shape());
  }
  const std::size_t n = a.dim(0);
  const std::size_t block_a = a.numel() / n;
  const std::size_t block_b = b.numel() / n;
  Shape shape = a.shape();
  shape[1] += b.dim(1);
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<double> out;
  out.reserve(av.size() + bv.size());
  for (std::size_t s = 0; s < n; ++s) {
    out.insert(out.end(), av.begin() + s * block_a, av.begin() + (s + 1) * block_a);
    out.insert(out.end(), bv.begin() + s * block_b, bv.begin() + (s + 1) * block_b);
  }
  Tensor result = make_output("concat_channels", std::move(shape), std::move(out));
  if (Tape* tape = recording_tape({&a, &b})) {
    tape->record("concat_channels", {a.node(), b.node()}, result.node(),
                 [an = a.node(), bn = b.node(), n, block_a, block_b](const Node& o) {
                   double* ga = grad_target(an);
                   double* gb = grad_target(bn);
                   for (std::size_t s = 0; s < n; ++s) {
                     const double* src = o.grad.data() + s * (block_a + block_b);
                     if (ga)
                       for (std::size_t i = 0; i < block_a; ++i) ga[s * block_a + i] += src[i];
                     if (gb)
                       for (std::size_t i = 0; i < block_b; ++i) gb[s * block_b + i] += src[block_a + i];
                   }
                 });
  }
  return result;
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) shape_mismatch("reshape", a.shape(), shape);
  std::vector<double> values(a.data().begin(), a.data().end());
  Tensor result = make_output("reshape", std::move(shape), std::move(values));
  if (Tape* tape = recording_tape({&a})) {
    tape->record("reshape", {a.node()}, result.node(), [an = a.node()](const Node& o) {
      if (double* g = grad_target(an))
        for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// Norms and quaternion rows

Tensor l2_norm(const Tensor& a) {
  double ss = 0.0;
  for (double v : a.data()) ss += v * v;
  const double norm = std::sqrt(ss);
  Tensor result = make_output("l2_norm", {1}, {norm});
  if (Tape* tape = recording_tape({&a})) {
    tape->record("l2_norm", {a.node()}, result.node(), [an = a.node()](const Node& o) {
      double* g = grad_target(an);
      const double norm = o.value[0];
      if (!g || norm == 0.0) return;
      for (std::size_t i = 0; i < an->value.size(); ++i) g[i] += o.grad[0] * an->value[i] / norm;
    });
  }
  return result;
}

Tensor row_norms(const Tensor& a) {
  if (a.rank() != 2) bad_shape("row_norms", a.shape(), "rank 2");
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  const auto av = a.data();
  std::vector<double> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (std::size_t c = 0; c < cols; ++c) ss += av[r * cols + c] * av[r * cols + c];
    out[r] = std::sqrt(ss);
  }
  Tensor result = make_output("row_norms", {rows}, std::move(out));
  if (Tape* tape = recording_tape({&a})) {
    tape->record("row_norms", {a.node()}, result.node(), [an = a.node(), rows, cols](const Node& o) {
      double* g = grad_target(an);
      if (!g) return;
      for (std::size_t r = 0; r < rows; ++r) {
        const double norm = o.value[r];
        if (norm == 0.0) continue;
        const double f = o.grad[r] / norm;
        for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += f * an->value[r * cols + c];
      }
    });
  }
  return result;
}

Tensor normalize_rows(const Tensor& a) {
  if (a.rank() != 2) bad_shape("normalize_rows", a.shape(), "rank 2");
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  const auto av = a.data();
  auto norms = std::make_shared<std::vector<double>>(rows);
  std::vector<double> out(av.size());
  for (std::size_t r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (std::size_t c = 0; c < cols; ++c) ss += av[r * cols + c] * av[r * cols + c];
    const double norm = std::sqrt(ss);
    if (!(norm > 1e-12)) throw NumericalError("normalize_rows: row " + std::to_string(r) + " has zero norm");
    (*norms)[r] = norm;
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = av[r * cols + c] / norm;
  }
  Tensor result = make_output("normalize_rows", a.shape(), std::move(out));
  if (Tape* tape = recording_tape({&a})) {
    tape->record("normalize_rows", {a.node()}, result.node(), [an = a.node(), norms, rows, cols](const Node& o) {
      double* g = grad_target(an);
      if (!g) return;
      for (std::size_t r = 0; r < rows; ++r) {
        const double* y = o.value.data() + r * cols;
        const double* gy = o.grad.data() + r * cols;
        double dot = 0.0;
        for (std::size_t c = 0; c < cols; ++c) dot += y[c] * gy[c];
        for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += (gy[c] - y[c] * dot) / (*norms)[r];
      }
    });
  }
  return result;
}

Tensor quat_mul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || a.dim(1) != 4 || a.shape() != b.shape()) shape_mismatch("quat_mul", a.shape(), b.shape());
  const std::size_t rows = a.dim(0);
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<double> out(4 * rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double m[16];
    quat_right_matrix(bv.data() + 4 * r, m);
    for (int i = 0; i < 4; ++i) {
      double acc = 0.0;
      for (int j = 0; j < 4; ++j) acc += m[4 * i + j] * av[4 * r + j];
      out[4 * r + i] = acc;
    }
  }
  Tensor result = make_output("quat_mul", a.shape(), std::move(out));
  if (Tape* tape = recording_tape({&a, &b})) {
    tape->record("quat_mul", {a.node(), b.node()}, result.node(), [an = a.node(), bn = b.node(), rows](const Node& o) {
      double* ga = grad_target(an);
      double* gb = grad_target(bn);
      for (std::size_t r = 0; r < rows; ++r) {
        const double* go = o.grad.data() + 4 * r;
        double m[16];
        if (ga) {
          quat_right_matrix(bn->value.data() + 4 * r, m);
          for (int j = 0; j < 4; ++j)
            for (int i = 0; i < 4; ++i) ga[4 * r + j] += m[4 * i + j] * go[i];
        }
        if (gb) {
          quat_left_matrix(an->value.data() + 4 * r, m);
          for (int j = 0; j < 4; ++j)
            for (int i = 0; i < 4; ++i) gb[4 * r + j] += m[4 * i + j] * go[i];
        }
      }
    });
  }
  return result;
}

Tensor quat_conjugate(const Tensor& a) {
  if (a.rank() != 2 || a.dim(1) != 4) bad_shape("quat_conjugate", a.shape(), "[N,4]");
  const auto av = a.data();
  std::vector<double> out(av.begin(), av.end());
  for (std::size_t i = 0; i < out.size(); ++i)
    if (i % 4 != 0) out[i] = -out[i];
  Tensor result = make_output("quat_conjugate", a.shape(), std::move(out));
  if (Tape* tape = recording_tape({&a})) {
    tape->record("quat_conjugate", {a.node()}, result.node(), [an = a.node()](const Node& o) {
      if (double* g = grad_target(an))
        for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += (i % 4 == 0) ? o.grad[i] : -o.grad[i];
    });
  }
  return result;
}

// ---------------------------------------------------------------------------

Tensor dropout(const Tensor& a, double keep, bool training, std::mt19937_64& rng) {
  if (!(keep > 0.0 && keep <= 1.0)) throw Error("dropout: keep probability must lie in (0,1]");
  if (!training || keep == 1.0) return a;
  const auto av = a.data();
  auto mask = std::make_shared<std::vector<double>>(av.size());
  std::vector<double> out(av.size());
  const double inv_keep = 1.0 / keep;
  for (std::size_t i = 0; i < av.size(); ++i) {
    // 53 random bits -> uniform [0,1); independent of the standard library's distributions.
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    (*mask)[i] = u < keep ? inv_keep : 0.0;
    out[i] = av[i] * (*mask)[i];
  }
  Tensor result = make_output("dropout", a.shape(), std::move(out));
  if (Tape* tape = recording_tape({&a})) {
    tape->record("dropout", {a.node()}, result.node(), [an = a.node(), mask](const Node& o) {
      if (double* g = grad_target(an))
        for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * (*mask)[i];
    });
  }
  return result;
}

}  // namespace vloc
