#ifndef VLOC_TENSOR_HPP_
#define VLOC_TENSOR_HPP_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace vloc {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

class Tape;

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until something is accumulated
  bool requires_grad = false;
  bool leaf = true;
  std::uint64_t recorded_on = 0;  // epoch of the tape that produced it

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
  }
};

}  // namespace detail

/// Dense row-major N-d array of doubles. Copies share the underlying
/// storage; use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  // Mutable access is meant for leaves (parameter updates, fixtures).
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t flat_index) const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool is_leaf() const;

  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  Tensor clone() const;   // deep copy, same requires_grad, no grad
  Tensor detach() const;  // deep copy, requires_grad = false

  bool same_storage(const Tensor& other) const noexcept {
    return node_ == other.node_;
  }

  const std::shared_ptr<detail::Node>& node() const noexcept { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Ordered record of executed primitives. Entries are appended in execution
/// order, which is a topological order of the graph.
class Tape {
 public:
  using BackwardFn = std::function<void(const detail::Node& out)>;

  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::string_view op,
              std::vector<std::shared_ptr<detail::Node>> inputs,
              const std::shared_ptr<detail::Node>& output, BackwardFn fn);

  std::size_t size() const noexcept { return entries_.size(); }
  std::uint64_t epoch() const noexcept { return epoch_; }

  /// Propagates d(root)/d(.) to every leaf that requires gradients and
  /// returns those leaves. Gradients accumulate into existing buffers.
  /// The tape is cleared afterwards.
  std::vector<Tensor> backward(const Tensor& root);

  void clear();

  /// Tape active on the calling thread, or nullptr.
  static Tape* current() noexcept;

 private:
  friend class TapeScope;

  struct Entry {
    std::string_view op;
    std::vector<std::shared_ptr<detail::Node>> inputs;
    std::shared_ptr<detail::Node> output;
    BackwardFn fn;
  };

  std::vector<Entry> entries_;
  std::uint64_t epoch_;
};

/// Makes a tape the active recorder on this thread for the scope's lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

/// backward() on the active tape.
std::vector<Tensor> backward(const Tensor& root);

// ---------------------------------------------------------------------------
// Primitives. Each one validates shapes, checks its output for NaN/Inf and
// records itself on the active tape when any input requires gradients.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
Tensor square(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

Tensor elu(const Tensor& a, double alpha = 1.0);
Tensor relu(const Tensor& a);

/// [M,K] x [K,N] -> [M,N]
Tensor matmul(const Tensor& a, const Tensor& b);
/// [N,D] + [D] broadcast over rows.
Tensor add_bias(const Tensor& x, const Tensor& bias);
/// x [N,in], weight [in,out], bias [out].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

enum class Padding { Valid, Same };

struct Conv2dOptions {
  std::size_t stride = 1;
  Padding padding = Padding::Same;
};

/// x [N,C,H,W], weight [O,C,kh,kw]; no bias.
Tensor conv2d(const Tensor& x, const Tensor& weight, Conv2dOptions options = {});
/// x [N,C,H,W] * scale[c] + bias[c]
Tensor channel_affine(const Tensor& x, const Tensor& scale, const Tensor& bias);
/// [N,C,H,W] -> [N,C]
Tensor global_avg_pool(const Tensor& x);
/// Concatenation along axis 1 (channels for rank 4, features for rank 2).
Tensor concat_channels(const Tensor& a, const Tensor& b);
Tensor reshape(const Tensor& a, Shape shape);

/// Euclidean norm of all entries -> scalar. Subgradient at zero is zero.
Tensor l2_norm(const Tensor& a);
/// [N,D] -> [N] per-row Euclidean norms. Subgradient at zero is zero.
Tensor row_norms(const Tensor& a);
/// [N,D] rows scaled to unit length.
Tensor normalize_rows(const Tensor& a);

/// Row-wise Hamilton product of [N,4] quaternions in (w,x,y,z) order.
Tensor quat_mul(const Tensor& a, const Tensor& b);
/// Row-wise conjugate (w,-x,-y,-z).
Tensor quat_conjugate(const Tensor& a);

/// Inverted dropout: in training each entry is kept with probability keep
/// and scaled by 1/keep; in evaluation it is the identity.
Tensor dropout(const Tensor& a, double keep, bool training, std::mt19937_64& rng);

}  // namespace vloc

#endif  // VLOC_TENSOR_HPP_
