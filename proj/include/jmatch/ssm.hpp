#pragma once

#include <random>
#include <utility>

#include "jmatch/tensor.hpp"

namespace jmatch::ssm {

struct SsmDims {
  std::size_t model = 32;   // C1
  std::size_t expand = 64;  // C_e
  std::size_t state = 8;    // C_s
  std::size_t conv_window = 4;

  void validate() const;
};

/// Widths used by the original full-size model (C1=256, C_e=512, C_s=16).
inline constexpr SsmDims kReferenceDims{256, 512, 16, 4};

/// Learnable state of one selective state-space block.
struct SsmBlockParams {
  SsmDims dims;
  Tensor norm_scale;  // C1
  Tensor norm_shift;  // C1
  Tensor w_x;         // C1 x Ce
  Tensor w_z;         // C1 x Ce
  Tensor conv;        // w x Ce, depthwise causal
  Tensor w_delta;     // Ce x Ce
  Tensor delta_bias;  // Ce
  Tensor a_prime;     // Ce x Cs, negative
  Tensor w_b;         // Ce x Cs
  Tensor w_c;         // Ce x Cs
  Tensor w_out;       // Ce x C1

  /// Bounded uniform weights, zero biases, unit norm scale and
  /// A'[e, s] = -(s + 1).
  static SsmBlockParams init(const SsmDims& dims, std::mt19937& rng);

  void collect(const std::string& prefix, NamedTensors& out) const;
};

/// Zero-order hold for a diagonal state matrix with the Euler input term:
/// A[n,e,s] = exp(delta[n,e] * a_prime[e,s]), B[n,e,s] = delta[n,e] * b_prime[n,s].
/// delta must be strictly positive.
std::pair<Tensor, Tensor> discretize(const Tensor& a_prime, const Tensor& b_prime, const Tensor& delta);

/// Recurrent mode. a, b: N x Ce x Cs; c: N x Cs; x: N x Ce. Returns N x Ce.
///   h_i = a_i * h_{i-1} + b_i * x_i   (state axis broadcast)
///   y_i[e] = sum_s h_i[e, s] * c_i[s]
Tensor selective_scan(const Tensor& a, const Tensor& b, const Tensor& c, const Tensor& x);

/// Convolutional mode for time-invariant parameters: builds the kernel
/// K_k = C A^k B per channel and convolves it causally with x. Takes the same
/// per-position layout as selective_scan and throws if any parameter varies
/// along the sequence. Not differentiable.
Tensor global_conv_scan(const Tensor& a, const Tensor& b, const Tensor& c, const Tensor& x);

/// One block: S (N x C1) -> S + W_out (SSM(...) * silu(Z)).
Tensor mamba_block(const Tensor& seq, const SsmBlockParams& params);

}  // namespace jmatch::ssm
