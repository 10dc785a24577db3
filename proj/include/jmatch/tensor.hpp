#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

namespace jmatch {

// The library is compiled once per scalar type. The float build is the
// production one; the double build exists for tight finite-difference checks.
#ifdef JMATCH_SCALAR_DOUBLE
using Scalar = double;
#else
using Scalar = float;
#endif

using Shape = std::vector<std::size_t>;

class TensorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

class Tensor;
class GradSink;
class Gradients;

/// Receives the gradient of the op's output and accumulates into its inputs.
using BackwardFn = std::function<void(std::span<const Scalar> grad_out, GradSink& sink)>;

namespace detail {
struct Node {
  Shape shape;
  std::vector<Scalar> value;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;
  bool requires_grad = false;
};
}  // namespace detail

/// N-dimensional row-major array with an optional link into the recorded
/// differentiation graph. Copies share storage; values never change after an
/// op produced them (parameters are the only leaves updated in place, by the
/// optimizer, outside of any forward pass).
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, Scalar value);
  static Tensor from_values(Shape shape, std::vector<Scalar> values);
  static Tensor scalar(Scalar value);
  static Tensor parameter(Shape shape, std::vector<Scalar> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return values().size(); }
  std::span<const Scalar> values() const;
  Scalar item() const;
  Scalar at(std::initializer_list<std::size_t> index) const;
  bool requires_grad() const { return node_ && node_->requires_grad; }

  /// Identity of the underlying storage; stable across copies.
  const void* id() const { return node_.get(); }

  /// Overwrites a leaf's values. Rejected for op results.
  void assign(std::span<const Scalar> values);

  /// Same values, no graph link.
  Tensor detach() const;

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  friend Tensor make_tensor(const char* op, Shape shape, std::vector<Scalar> values,
                            std::initializer_list<Tensor> inputs, BackwardFn backward);
  friend Tensor make_tensor(const char* op, Shape shape, std::vector<Scalar> values,
                            const std::vector<Tensor>& inputs, BackwardFn backward);
  friend class GradSink;
  friend class Gradients;
  friend Gradients backward(const Tensor& loss, std::span<const Tensor> params);

  std::shared_ptr<detail::Node> node_;
};

/// Builds an op result. The backward closure is kept only when gradient
/// recording is enabled and at least one input requires a gradient. Throws
/// TensorError if any produced value is not finite.
Tensor make_tensor(const char* op, Shape shape, std::vector<Scalar> values,
                   std::initializer_list<Tensor> inputs, BackwardFn backward);
Tensor make_tensor(const char* op, Shape shape, std::vector<Scalar> values,
                   const std::vector<Tensor>& inputs, BackwardFn backward);

class GradSink {
 public:
  /// Zero-initialised accumulation buffer for `t`, or an empty span when `t`
  /// does not take part in differentiation.
  std::span<Scalar> slot(const Tensor& t);

 private:
  friend Gradients backward(const Tensor& loss, std::span<const Tensor> params);
  std::unordered_map<const detail::Node*, std::vector<Scalar>> buffers_;
};

class Gradients {
 public:
  /// Gradient for a requested parameter; same shape as the parameter.
  const Tensor& operator[](const Tensor& param) const;
  bool contains(const Tensor& param) const { return grads_.count(param.id()) != 0; }
  std::size_t size() const { return grads_.size(); }

 private:
  friend Gradients backward(const Tensor& loss, std::span<const Tensor> params);
  std::unordered_map<const void*, Tensor> grads_;
};

/// Reverse-mode pass from a scalar loss. Parameters the loss does not depend
/// on receive zero tensors.
Gradients backward(const Tensor& loss, std::span<const Tensor> params);

/// Disables graph recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)), as a trainable leaf.
Tensor uniform_parameter(Shape shape, std::size_t fan_in, std::mt19937& rng, double gain = 1.0);

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, Scalar factor);
Tensor add_scalar(const Tensor& x, Scalar value);

Tensor silu(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor square(const Tensor& x);
Tensor reciprocal(const Tensor& x);
/// x^exponent for x >= 0.
Tensor pow(const Tensor& x, Scalar exponent);
Tensor clamp_min(const Tensor& x, Scalar lo);

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Sums over the last axis.
Tensor sum_last(const Tensor& x);

// ---------------------------------------------------------------------------
// Shape and indexing

Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose_last2(const Tensor& x);
Tensor narrow(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);

/// out[i] = x[start + i * step] per axis; output extent ceil((n - start) / step).
Tensor strided_slice(const Tensor& x, std::span<const std::size_t> start,
                     std::span<const std::size_t> step);
/// Inverse placement of strided_slice into a zero tensor of `out_shape`.
Tensor strided_scatter(const Tensor& x, const Shape& out_shape, std::span<const std::size_t> start,
                       std::span<const std::size_t> step);

inline constexpr std::size_t kZeroRow = static_cast<std::size_t>(-1);

/// Treats x as rows along axis 0; kZeroRow yields a zero row.
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);
/// out[rows[k]] += x[k] into `out_rows` rows; kZeroRow entries are dropped.
Tensor scatter_rows(const Tensor& x, std::span<const std::size_t> rows, std::size_t out_rows);
/// 1-D selection of flat elements.
Tensor gather_flat(const Tensor& x, std::span<const std::size_t> indices);

// ---------------------------------------------------------------------------
// Linear algebra and normalisation

/// Batched product over the last two axes. `b` may be rank 2 (shared).
Tensor matmul(const Tensor& a, const Tensor& b);
/// x[..., in] * w[in, out] (+ bias[out]).
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias = {});
Tensor softmax(const Tensor& x, std::size_t axis);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Scalar eps = Scalar(1e-5));

// ---------------------------------------------------------------------------
// Convolutions

/// x: H x W x Cin, kernel: kh x kw x Cin x Cout (odd kh, kw), zero "same"
/// padding; output ceil(H/stride) x ceil(W/stride) x Cout. Each output sums in
/// ky, kx, ci order, bias added last.
Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias = {}, std::size_t stride = 1);

enum class Padding { Causal, Same };

/// Per-channel convolution along axis 0 of x: N x C with kernel: w x C.
/// Causal: out[i] = sum_k kernel[k] * x[i - (w-1) + k].
/// Same:   out[i] = sum_k kernel[k] * x[i - (w-1)/2 + k].
Tensor conv1d_depthwise(const Tensor& x, const Tensor& kernel, Padding padding);

}  // namespace jmatch
