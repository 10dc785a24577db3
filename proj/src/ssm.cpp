#include "jmatch/ssm.hpp"

#include <cmath>

namespace jmatch::ssm {

void SsmDims::validate() const {
  if (model == 0 || expand == 0 || state == 0 || conv_window == 0) throw TensorError("ssm dims must be positive");
  if (expand < model) throw TensorError("ssm expanded width must be >= model width");
}

SsmBlockParams SsmBlockParams::init(const SsmDims& dims, std::mt19937& rng) {
  dims.validate();
  const auto c1 = dims.model, ce = dims.expand, cs = dims.state;
  SsmBlockParams p;
  p.dims = dims;
  p.norm_scale = Tensor::parameter({c1}, std::vector<Scalar>(c1, Scalar(1)));
  p.norm_shift = Tensor::parameter({c1}, std::vector<Scalar>(c1, Scalar(0)));
  p.w_x = uniform_parameter({c1, ce}, c1, rng);
  p.w_z = uniform_parameter({c1, ce}, c1, rng);
  p.conv = uniform_parameter({dims.conv_window, ce}, dims.conv_window, rng);
  p.w_delta = uniform_parameter({ce, ce}, ce, rng);
  p.delta_bias = Tensor::parameter({ce}, std::vector<Scalar>(ce, Scalar(0)));
  std::vector<Scalar> a(ce * cs);
  for (std::size_t e = 0; e < ce; ++e)
    for (std::size_t s = 0; s < cs; ++s) a[e * cs + s] = -static_cast<Scalar>(s + 1);
  p.a_prime = Tensor::parameter({ce, cs}, std::move(a));
  p.w_b = uniform_parameter({ce, cs}, ce, rng);
  p.w_c = uniform_parameter({ce, cs}, ce, rng);
  p.w_out = uniform_parameter({ce, c1}, ce, rng);
  return p;
}

void SsmBlockParams::collect(const std::string& prefix, NamedTensors& out) const {
  out.emplace_back(prefix + "norm_scale", norm_scale);
  out.emplace_back(prefix + "norm_shift", norm_shift);
  out.emplace_back(prefix + "w_x", w_x);
  out.emplace_back(prefix + "w_z", w_z);
  out.emplace_back(prefix + "conv", conv);
  out.emplace_back(prefix + "w_delta", w_delta);
  out.emplace_back(prefix + "delta_bias", delta_bias);
  out.emplace_back(prefix + "a_prime", a_prime);
  out.emplace_back(prefix + "w_b", w_b);
  out.emplace_back(prefix + "w_c", w_c);
  out.emplace_back(prefix + "w_out", w_out);
}

std::pair<Tensor, Tensor> discretize(const Tensor& a_prime, const Tensor& b_prime, const Tensor& delta) {
  if (a_prime.rank() != 2 || b_prime.rank() != 2 || delta.rank() != 2) throw TensorError("discretize: rank mismatch");
  const std::size_t ce = a_prime.dim(0), cs = a_prime.dim(1), n = delta.dim(0);
  if (delta.dim(1) != ce || b_prime.dim(0) != n || b_prime.dim(1) != cs) {
    throw TensorError("discretize: shapes " + shape_string(a_prime.shape()) + ", " + shape_string(b_prime.shape()) +
                      ", " + shape_string(delta.shape()) + " are inconsistent");
  }
  for (auto d : delta.values()) {
    if (!(d > 0)) throw TensorError("discretize: step size must be strictly positive");
  }
  auto av = a_prime.values(), bv = b_prime.values(), dv = delta.values();

  std::vector<Scalar> a_bar(n * ce * cs), b_bar(n * ce * cs);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t e = 0; e < ce; ++e) {
      const Scalar d = dv[i * ce + e];
      for (std::size_t s = 0; s < cs; ++s) {
        a_bar[(i * ce + e) * cs + s] = std::exp(d * av[e * cs + s]);
        b_bar[(i * ce + e) * cs + s] = d * bv[i * cs + s];
      }
    }

  auto a_vals = std::make_shared<std::vector<Scalar>>(a_bar);
  Tensor a_out = make_tensor("discretize_a", {n, ce, cs}, std::move(a_bar), {a_prime, delta},
                             [a_prime, delta, a_vals, n, ce, cs](std::span<const Scalar> g, GradSink& sink) {
                               auto av = a_prime.values(), dv = delta.values();
                               auto ga = sink.slot(a_prime);
                               auto gd = sink.slot(delta);
                               for (std::size_t i = 0; i < n; ++i)
                                 for (std::size_t e = 0; e < ce; ++e) {
                                   Scalar acc = 0;
                                   for (std::size_t s = 0; s < cs; ++s) {
                                     const std::size_t at = (i * ce + e) * cs + s;
                                     const Scalar local = g[at] * (*a_vals)[at];
                                     acc += local * av[e * cs + s];
                                     if (!ga.empty()) ga[e * cs + s] += local * dv[i * ce + e];
                                   }
                                   if (!gd.empty()) gd[i * ce + e] += acc;
                                 }
                             });
  Tensor b_out = make_tensor("discretize_b", {n, ce, cs}, std::move(b_bar), {b_prime, delta},
                             [b_prime, delta, n, ce, cs](std::span<const Scalar> g, GradSink& sink) {
                               auto bv = b_prime.values(), dv = delta.values();
                               auto gb = sink.slot(b_prime);
                               auto gd = sink.slot(delta);
                               for (std::size_t i = 0; i < n; ++i)
                                 for (std::size_t e = 0; e < ce; ++e) {
                                   Scalar acc = 0;
                                   for (std::size_t s = 0; s < cs; ++s) {
                                     const Scalar gv = g[(i * ce + e) * cs + s];
                                     acc += gv * bv[i * cs + s];
                                     if (!gb.empty()) gb[i * cs + s] += gv * dv[i * ce + e];
                                   }
                                   if (!gd.empty()) gd[i * ce + e] += acc;
                                 }
                             });
  return {a_out, b_out};
}

namespace {

struct ScanShape {
  std::size_t n, ce, cs;
};

ScanShape check_scan_shapes(const Tensor& a, const Tensor& b, const Tensor& c, const Tensor& x) {
  if (a.rank() != 3 || b.shape() != a.shape() || c.rank() != 2 || x.rank() != 2) {
    throw TensorError("scan: expected A, B: N x Ce x Cs, C: N x Cs, X: N x Ce");
  }
  ScanShape s{a.dim(0), a.dim(1), a.dim(2)};
  if (c.dim(0) != s.n || c.dim(1) != s.cs || x.dim(0) != s.n || x.dim(1) != s.ce) {
    throw TensorError("scan: inconsistent shapes");
  }
  return s;
}

}  // namespace

Tensor selective_scan(const Tensor& a, const Tensor& b, const Tensor& c, const Tensor& x) {
  const auto [n, ce, cs] = check_scan_shapes(a, b, c, x);
  auto av = a.values(), bv = b.values(), cv = c.values(), xv = x.values();
  const std::size_t state_size = ce * cs;
  // Every state h_i is kept for the reverse pass.
  auto states = std::make_shared<std::vector<Scalar>>(n * state_size, Scalar(0));
  std::vector<Scalar> y(n * ce, Scalar(0));
  std::vector<Scalar> h(state_size, Scalar(0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t e = 0; e < ce; ++e) {
      const Scalar xe = xv[i * ce + e];
      Scalar acc = 0;
      for (std::size_t s = 0; s < cs; ++s) {
        const std::size_t at = e * cs + s;
        h[at] = av[i * state_size + at] * h[at] + bv[i * state_size + at] * xe;
        acc += h[at] * cv[i * cs + s];
      }
      y[i * ce + e] = acc;
    }
    std::copy(h.begin(), h.end(), states->begin() + static_cast<std::ptrdiff_t>(i * state_size));
  }

  return make_tensor(
      "selective_scan", {n, ce}, std::move(y), {a, b, c, x},
      [a, b, c, x, states, n, ce, cs, state_size](std::span<const Scalar> g, GradSink& sink) {
        auto av = a.values(), bv = b.values(), cv = c.values(), xv = x.values();
        auto ga = sink.slot(a);
        auto gb = sink.slot(b);
        auto gc = sink.slot(c);
        auto gx = sink.slot(x);
        std::vector<Scalar> gh(state_size, Scalar(0));  // dL/dh_i, accumulated backwards
        for (std::size_t i = n; i-- > 0;) {
          const Scalar* hi = states->data() + i * state_size;
          const Scalar* hprev = i > 0 ? states->data() + (i - 1) * state_size : nullptr;
          for (std::size_t e = 0; e < ce; ++e) {
            const Scalar gy = g[i * ce + e];
            const Scalar xe = xv[i * ce + e];
            Scalar gxe = 0;
            for (std::size_t s = 0; s < cs; ++s) {
              const std::size_t at = e * cs + s;
              gh[at] += gy * cv[i * cs + s];
              if (!gc.empty()) gc[i * cs + s] += gy * hi[at];
              const Scalar dh = gh[at];
              if (!ga.empty() && hprev) ga[i * state_size + at] += dh * hprev[at];
              if (!gb.empty()) gb[i * state_size + at] += dh * xe;
              gxe += dh * bv[i * state_size + at];
              gh[at] = dh * av[i * state_size + at];
            }
            if (!gx.empty()) gx[i * ce + e] += gxe;
          }
        }
      });
}

Tensor global_conv_scan(const Tensor& a, const Tensor& b, const Tensor& c, const Tensor& x) {
  const auto [n, ce, cs] = check_scan_shapes(a, b, c, x);
  auto av = a.values(), bv = b.values(), cv = c.values(), xv = x.values();
  const std::size_t state_size = ce * cs;
  for (std::size_t i = 1; i < n; ++i) {
    for (std::size_t k = 0; k < state_size; ++k) {
      if (av[i * state_size + k] != av[k] || bv[i * state_size + k] != bv[k]) {
        throw TensorError("global_conv_scan: A/B vary along the sequence; use selective_scan");
      }
    }
    for (std::size_t s = 0; s < cs; ++s) {
      if (cv[i * cs + s] != cv[s]) throw TensorError("global_conv_scan: C varies along the sequence");
    }
  }

  // K[k, e] = sum_s C[s] * A[e,s]^k * B[e,s]
  std::vector<Scalar> kernel(n * ce, Scalar(0));
  std::vector<Scalar> power(state_size);
  for (std::size_t k = 0; k < state_size; ++k) power[k] = bv[k];
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t e = 0; e < ce; ++e) {
      Scalar acc = 0;
      for (std::size_t s = 0; s < cs; ++s) acc += cv[s] * power[e * cs + s];
      kernel[k * ce + e] = acc;
    }
    for (std::size_t j = 0; j < state_size; ++j) power[j] *= av[j];
  }

  std::vector<Scalar> y(n * ce, Scalar(0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t e = 0; e < ce; ++e) {
      Scalar acc = 0;
      for (std::size_t k = 0; k <= i; ++k) acc += kernel[k * ce + e] * xv[(i - k) * ce + e];
      y[i * ce + e] = acc;
    }
  return Tensor::from_values({n, ce}, std::move(y));
}

Tensor mamba_block(const Tensor& seq, const SsmBlockParams& p) {
  if (seq.rank() != 2 || seq.dim(1) != p.dims.model) {
    throw TensorError("mamba_block: expected N x " + std::to_string(p.dims.model) + " input, got " +
                      shape_string(seq.shape()));
  }
  if (seq.dim(0) == 0) throw TensorError("mamba_block: empty sequence");
  const Tensor normed = layer_norm(seq, p.norm_scale, p.norm_shift);
  const Tensor x_in = linear(normed, p.w_x);
  const Tensor z = linear(normed, p.w_z);
  const Tensor x = silu(conv1d_depthwise(x_in, p.conv, Padding::Causal));
  const Tensor delta = softplus(linear(x, p.w_delta, p.delta_bias));
  const Tensor b_prime = linear(x, p.w_b);
  const Tensor c = linear(x, p.w_c);
  const auto [a_bar, b_bar] = discretize(p.a_prime, b_prime, delta);
  const Tensor y = mul(selective_scan(a_bar, b_bar, c, x), silu(z));
  return add(linear(y, p.w_out), seq);
}

}  // namespace jmatch::ssm
