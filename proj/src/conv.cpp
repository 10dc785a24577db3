#include "jmatch/tensor.hpp"

namespace jmatch {

Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias, std::size_t stride) {
  if (x.rank() != 3 || kernel.rank() != 4) throw TensorError("conv2d: expected HxWxC input and khxkwxCinxCout kernel");
  const std::size_t h = x.dim(0), w = x.dim(1), cin = x.dim(2);
  const std::size_t kh = kernel.dim(0), kw = kernel.dim(1), cout = kernel.dim(3);
  if (kernel.dim(2) != cin) {
    throw TensorError("conv2d: channel mismatch, input has " + std::to_string(cin) + ", kernel expects " +
                      std::to_string(kernel.dim(2)));
  }
  if (kh % 2 == 0 || kw % 2 == 0) throw TensorError("conv2d: kernel extents must be odd");
  if (stride == 0) throw TensorError("conv2d: stride must be positive");
  if (bias.defined() && bias.shape() != Shape{cout}) throw TensorError("conv2d: bias shape mismatch");

  const std::size_t ho = (h + stride - 1) / stride, wo = (w + stride - 1) / stride;
  const auto pad_y = static_cast<std::ptrdiff_t>(kh / 2), pad_x = static_cast<std::ptrdiff_t>(kw / 2);
  auto xv = x.values(), kv = kernel.values();
  std::vector<Scalar> out(ho * wo * cout, Scalar(0));

  // Each out[oy, ox, co] accumulates over ky, kx, ci in that order; the
  // vectorised inner loop over co does not change the per-output order.
  for (std::size_t oy = 0; oy < ho; ++oy) {
    for (std::size_t ox = 0; ox < wo; ++ox) {
      Scalar* o = out.data() + (oy * wo + ox) * cout;
      for (std::size_t ky = 0; ky < kh; ++ky) {
        const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - pad_y;
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
        for (std::size_t kx = 0; kx < kw; ++kx) {
          const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - pad_x;
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
          const Scalar* in = xv.data() + (static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)) * cin;
          const Scalar* k = kv.data() + (ky * kw + kx) * cin * cout;
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const Scalar v = in[ci];
            const Scalar* kc = k + ci * cout;
            for (std::size_t co = 0; co < cout; ++co) o[co] += v * kc[co];
          }
        }
      }
      if (bias.defined()) {
        auto bv = bias.values();
        for (std::size_t co = 0; co < cout; ++co) o[co] += bv[co];
      }
    }
  }

  return make_tensor(
      "conv2d", {ho, wo, cout}, std::move(out), {x, kernel, bias},
      [=](std::span<const Scalar> g, GradSink& sink) {
        auto xv = x.values(), kv = kernel.values();
        auto gx = sink.slot(x);
        auto gk = sink.slot(kernel);
        std::span<Scalar> gb = bias.defined() ? sink.slot(bias) : std::span<Scalar>{};
        for (std::size_t oy = 0; oy < ho; ++oy) {
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const Scalar* go = g.data() + (oy * wo + ox) * cout;
            for (std::size_t co = 0; co < gb.size(); ++co) gb[co] += go[co];
            for (std::size_t ky = 0; ky < kh; ++ky) {
              const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - pad_y;
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
              for (std::size_t kx = 0; kx < kw; ++kx) {
                const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - pad_x;
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                const std::size_t in_off =
                    (static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)) * cin;
                const std::size_t k_off = (ky * kw + kx) * cin * cout;
                for (std::size_t ci = 0; ci < cin; ++ci) {
                  if (!gx.empty()) {
                    Scalar acc = 0;
                    for (std::size_t co = 0; co < cout; ++co) acc += go[co] * kv[k_off + ci * cout + co];
                    gx[in_off + ci] += acc;
                  }
                  if (!gk.empty()) {
                    const Scalar v = xv[in_off + ci];
                    for (std::size_t co = 0; co < cout; ++co) gk[k_off + ci * cout + co] += v * go[co];
                  }
                }
              }
            }
          }
        }
      });
}

Tensor conv1d_depthwise(const Tensor& x, const Tensor& kernel, Padding padding) {
  if (x.rank() != 2 || kernel.rank() != 2) throw TensorError("conv1d_depthwise: expected NxC input and wxC kernel");
  const std::size_t n = x.dim(0), c = x.dim(1), win = kernel.dim(0);
  if (kernel.dim(1) != c) throw TensorError("conv1d_depthwise: channel mismatch");
  if (win == 0) throw TensorError("conv1d_depthwise: window must be >= 1");
  const auto lead = static_cast<std::ptrdiff_t>(padding == Padding::Causal ? win - 1 : (win - 1) / 2);
  auto xv = x.values(), kv = kernel.values();
  std::vector<Scalar> out(n * c, Scalar(0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < win; ++k) {
      const auto src = static_cast<std::ptrdiff_t>(i + k) - lead;
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(n)) continue;
      for (std::size_t ch = 0; ch < c; ++ch) {
        out[i * c + ch] += kv[k * c + ch] * xv[static_cast<std::size_t>(src) * c + ch];
      }
    }
  }
  return make_tensor("conv1d_depthwise", {n, c}, std::move(out), {x, kernel},
                     [=](std::span<const Scalar> g, GradSink& sink) {
                       auto xv = x.values(), kv = kernel.values();
                       auto gx = sink.slot(x);
                       auto gk = sink.slot(kernel);
                       for (std::size_t i = 0; i < n; ++i) {
                         for (std::size_t k = 0; k < win; ++k) {
                           const auto src = static_cast<std::ptrdiff_t>(i + k) - lead;
                           if (src < 0 || src >= static_cast<std::ptrdiff_t>(n)) continue;
                           const auto s = static_cast<std::size_t>(src);
                           for (std::size_t ch = 0; ch < c; ++ch) {
                             const Scalar go = g[i * c + ch];
                             if (!gx.empty()) gx[s * c + ch] += go * kv[k * c + ch];
                             if (!gk.empty()) gk[k * c + ch] += go * xv[s * c + ch];
                           }
                         }
                       }
                     });
}

}  // namespace jmatch
