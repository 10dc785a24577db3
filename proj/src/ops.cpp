#include <algorithm>
#include <cmath>
#include <numbers>

#include "jmatch/tensor.hpp"

namespace jmatch {

namespace {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw TensorError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                      shape_string(b.shape()));
  }
}

std::vector<Scalar> copy_values(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

// f(x) elementwise; dfdx(x, y) is the local derivative.
template <class F, class D>
Tensor unary(const char* op, const Tensor& x, F f, D dfdx) {
  auto in = x.values();
  std::vector<Scalar> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  auto y = std::make_shared<std::vector<Scalar>>(out);
  return make_tensor(op, x.shape(), std::move(out), {x}, [x, y, dfdx](std::span<const Scalar> g, GradSink& sink) {
    auto gx = sink.slot(x);
    if (gx.empty()) return;
    auto xv = x.values();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * dfdx(xv[i], (*y)[i]);
  });
}

Scalar sigmoid_of(Scalar v) {
  if (v >= 0) return Scalar(1) / (Scalar(1) + std::exp(-v));
  Scalar e = std::exp(v);
  return e / (Scalar(1) + e);
}

// Strides of a row-major shape.
std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> s(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
  return s;
}

// outer x axis x inner decomposition around `axis`.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  auto av = a.values(), bv = b.values();
  std::vector<Scalar> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make_tensor("add", a.shape(), std::move(out), {a, b}, [a, b](std::span<const Scalar> g, GradSink& sink) {
    for (const auto* t : {&a, &b}) {
      auto gt = sink.slot(*t);
      for (std::size_t i = 0; i < gt.size(); ++i) gt[i] += g[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  auto av = a.values(), bv = b.values();
  std::vector<Scalar> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return make_tensor("sub", a.shape(), std::move(out), {a, b}, [a, b](std::span<const Scalar> g, GradSink& sink) {
    auto ga = sink.slot(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
    auto gb = sink.slot(b);
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  auto av = a.values(), bv = b.values();
  std::vector<Scalar> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_tensor("mul", a.shape(), std::move(out), {a, b}, [a, b](std::span<const Scalar> g, GradSink& sink) {
    auto av = a.values(), bv = b.values();
    auto ga = sink.slot(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * bv[i];
    auto gb = sink.slot(b);
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * av[i];
  });
}

Tensor scale(const Tensor& x, Scalar factor) {
  return unary("scale", x, [factor](Scalar v) { return v * factor; }, [factor](Scalar, Scalar) { return factor; });
}

Tensor add_scalar(const Tensor& x, Scalar value) {
  return unary("add_scalar", x, [value](Scalar v) { return v + value; }, [](Scalar, Scalar) { return Scalar(1); });
}

Tensor silu(const Tensor& x) {
  return unary(
      "silu", x, [](Scalar v) { return v * sigmoid_of(v); },
      [](Scalar v, Scalar) {
        Scalar s = sigmoid_of(v);
        return s * (Scalar(1) + v * (Scalar(1) - s));
      });
}

Tensor gelu(const Tensor& x) {
  constexpr Scalar kInvSqrt2 = Scalar(0.70710678118654752440);
  constexpr Scalar kInvSqrt2Pi = Scalar(0.39894228040143267794);
  return unary(
      "gelu", x, [](Scalar v) { return Scalar(0.5) * v * (Scalar(1) + std::erf(v * kInvSqrt2)); },
      [](Scalar v, Scalar) {
        Scalar cdf = Scalar(0.5) * (Scalar(1) + std::erf(v * kInvSqrt2));
        return cdf + v * kInvSqrt2Pi * std::exp(Scalar(-0.5) * v * v);
      });
}

Tensor tanh(const Tensor& x) {
  return unary(
      "tanh", x, [](Scalar v) { return std::tanh(v); }, [](Scalar, Scalar y) { return Scalar(1) - y * y; });
}

Tensor softplus(const Tensor& x) {
  return unary(
      "softplus", x, [](Scalar v) { return v > Scalar(20) ? v : std::log1p(std::exp(v)); },
      [](Scalar v, Scalar) { return sigmoid_of(v); });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      "sigmoid", x, [](Scalar v) { return sigmoid_of(v); }, [](Scalar, Scalar y) { return y * (Scalar(1) - y); });
}

Tensor exp(const Tensor& x) {
  return unary(
      "exp", x, [](Scalar v) { return std::exp(v); }, [](Scalar, Scalar y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary(
      "log", x, [](Scalar v) { return std::log(v); }, [](Scalar v, Scalar) { return Scalar(1) / v; });
}

Tensor square(const Tensor& x) {
  return unary(
      "square", x, [](Scalar v) { return v * v; }, [](Scalar v, Scalar) { return Scalar(2) * v; });
}

Tensor reciprocal(const Tensor& x) {
  return unary(
      "reciprocal", x, [](Scalar v) { return Scalar(1) / v; }, [](Scalar, Scalar y) { return -y * y; });
}

Tensor pow(const Tensor& x, Scalar exponent) {
  for (auto v : x.values()) {
    if (v < 0) throw TensorError("pow: negative base");
  }
  return unary(
      "pow", x, [exponent](Scalar v) { return std::pow(v, exponent); },
      [exponent](Scalar v, Scalar) { return exponent * std::pow(v, exponent - Scalar(1)); });
}

Tensor clamp_min(const Tensor& x, Scalar lo) {
  return unary(
      "clamp_min", x, [lo](Scalar v) { return v < lo ? lo : v; },
      [lo](Scalar v, Scalar) { return v < lo ? Scalar(0) : Scalar(1); });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& x) {
  Scalar acc = 0;
  for (auto v : x.values()) acc += v;
  return make_tensor("sum", {}, {acc}, {x}, [x](std::span<const Scalar> g, GradSink& sink) {
    auto gx = sink.slot(x);
    for (auto& v : gx) v += g[0];
  });
}

Tensor mean(const Tensor& x) {
  if (x.size() == 0) throw TensorError("mean of empty tensor");
  return scale(sum(x), Scalar(1) / static_cast<Scalar>(x.size()));
}

Tensor sum_last(const Tensor& x) {
  if (x.rank() == 0) throw TensorError("sum_last on a scalar");
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  const std::size_t inner = x.shape().back();
  const std::size_t rows = inner ? x.size() / inner : shape_numel(out_shape);
  auto xv = x.values();
  std::vector<Scalar> out(rows, Scalar(0));
  for (std::size_t r = 0; r < rows; ++r) {
    Scalar acc = 0;
    for (std::size_t c = 0; c < inner; ++c) acc += xv[r * inner + c];
    out[r] = acc;
  }
  return make_tensor("sum_last", std::move(out_shape), std::move(out), {x},
                     [x, inner](std::span<const Scalar> g, GradSink& sink) {
                       auto gx = sink.slot(x);
                       for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i / inner];
                     });
}

// ---------------------------------------------------------------------------
// Shape and indexing

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.size()) {
    throw TensorError("reshape: " + shape_string(x.shape()) + " -> " + shape_string(shape));
  }
  return make_tensor("reshape", std::move(shape), copy_values(x), {x},
                     [x](std::span<const Scalar> g, GradSink& sink) {
                       auto gx = sink.slot(x);
                       for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
                     });
}

Tensor transpose_last2(const Tensor& x) {
  if (x.rank() < 2) throw TensorError("transpose_last2: rank < 2");
  Shape out_shape = x.shape();
  const std::size_t rows = out_shape[out_shape.size() - 2];
  const std::size_t cols = out_shape.back();
  std::swap(out_shape[out_shape.size() - 2], out_shape.back());
  const std::size_t mat = rows * cols;
  const std::size_t batch = mat ? x.size() / mat : 0;
  auto xv = x.values();
  std::vector<Scalar> out(x.size());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) out[b * mat + c * rows + r] = xv[b * mat + r * cols + c];
  return make_tensor("transpose_last2", std::move(out_shape), std::move(out), {x},
                     [x, rows, cols, batch, mat](std::span<const Scalar> g, GradSink& sink) {
                       auto gx = sink.slot(x);
                       if (gx.empty()) return;
                       for (std::size_t b = 0; b < batch; ++b)
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t c = 0; c < cols; ++c)
                             gx[b * mat + r * cols + c] += g[b * mat + c * rows + r];
                     });
}

Tensor narrow(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  if (axis >= x.rank() || start + length > x.dim(axis)) {
    throw TensorError("narrow: range out of bounds for " + shape_string(x.shape()));
  }
  auto split = split_at(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  auto xv = x.values();
  std::vector<Scalar> out(split.outer * length * split.inner);
  for (std::size_t o = 0; o < split.outer; ++o)
    for (std::size_t k = 0; k < length; ++k)
      for (std::size_t i = 0; i < split.inner; ++i)
        out[(o * length + k) * split.inner + i] = xv[(o * split.extent + start + k) * split.inner + i];
  return make_tensor("narrow", std::move(out_shape), std::move(out), {x},
                     [x, split, start, length](std::span<const Scalar> g, GradSink& sink) {
                       auto gx = sink.slot(x);
                       if (gx.empty()) return;
                       for (std::size_t o = 0; o < split.outer; ++o)
                         for (std::size_t k = 0; k < length; ++k)
                           for (std::size_t i = 0; i < split.inner; ++i)
                             gx[(o * split.extent + start + k) * split.inner + i] +=
                                 g[(o * length + k) * split.inner + i];
                     });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw TensorError("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw TensorError("concat: axis out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size()) throw TensorError("concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != first[i]) throw TensorError("concat: shape mismatch off the concat axis");
    }
    out_shape[axis] += s[axis];
  }
  auto split = split_at(out_shape, axis);
  std::vector<Scalar> out(shape_numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const std::size_t ext = p.dim(axis);
    auto pv = p.values();
    for (std::size_t o = 0; o < split.outer; ++o)
      for (std::size_t k = 0; k < ext; ++k)
        for (std::size_t i = 0; i < split.inner; ++i)
          out[(o * split.extent + offset + k) * split.inner + i] = pv[(o * ext + k) * split.inner + i];
    offset += ext;
  }
  return make_tensor("concat", std::move(out_shape), std::move(out), parts,
                     [parts, offsets, split, axis](std::span<const Scalar> g, GradSink& sink) {
                       for (std::size_t p = 0; p < parts.size(); ++p) {
                         auto gp = sink.slot(parts[p]);
                         if (gp.empty()) continue;
                         const std::size_t ext = parts[p].dim(axis);
                         for (std::size_t o = 0; o < split.outer; ++o)
                           for (std::size_t k = 0; k < ext; ++k)
                             for (std::size_t i = 0; i < split.inner; ++i)
                               gp[(o * ext + k) * split.inner + i] +=
                                   g[(o * split.extent + offsets[p] + k) * split.inner + i];
                       }
                     });
}

namespace {

// Flat input offsets addressed by a strided slice, in output order.
std::vector<std::size_t> strided_offsets(const Shape& in_shape, std::span<const std::size_t> start,
                                         std::span<const std::size_t> step, Shape& out_shape) {
  const std::size_t rank = in_shape.size();
  if (start.size() != rank || step.size() != rank) throw TensorError("strided_slice: need one start/step per axis");
  out_shape.assign(rank, 0);
  for (std::size_t k = 0; k < rank; ++k) {
    if (step[k] == 0 || start[k] >= step[k] || (step[k] > 1 && step[k] > in_shape[k])) {
      throw TensorError("strided_slice: offset/step out of range on axis " + std::to_string(k));
    }
    out_shape[k] = in_shape[k] > start[k] ? (in_shape[k] - start[k] + step[k] - 1) / step[k] : 0;
  }
  const auto in_strides = strides_of(in_shape);
  const std::size_t n = shape_numel(out_shape);
  std::vector<std::size_t> offsets(n);
  std::vector<std::size_t> idx(rank, 0);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < rank; ++k) off += (start[k] + idx[k] * step[k]) * in_strides[k];
    offsets[flat] = off;
    for (std::size_t k = rank; k-- > 0;) {
      if (++idx[k] < out_shape[k]) break;
      idx[k] = 0;
    }
  }
  return offsets;
}

}  // namespace

Tensor strided_slice(const Tensor& x, std::span<const std::size_t> start, std::span<const std::size_t> step) {
  Shape out_shape;
  auto offsets = strided_offsets(x.shape(), start, step, out_shape);
  auto xv = x.values();
  std::vector<Scalar> out(offsets.size());
  for (std::size_t i = 0; i < offsets.size(); ++i) out[i] = xv[offsets[i]];
  return make_tensor("strided_slice", std::move(out_shape), std::move(out), {x},
                     [x, offsets = std::move(offsets)](std::span<const Scalar> g, GradSink& sink) {
                       auto gx = sink.slot(x);
                       if (gx.empty()) return;
                       for (std::size_t i = 0; i < offsets.size(); ++i) gx[offsets[i]] += g[i];
                     });
}

Tensor strided_scatter(const Tensor& x, const Shape& out_shape, std::span<const std::size_t> start,
                       std::span<const std::size_t> step) {
  Shape slice_shape;
  auto offsets = strided_offsets(out_shape, start, step, slice_shape);
  if (slice_shape != x.shape()) {
    throw TensorError("strided_scatter: slice shape " + shape_string(slice_shape) + " does not match input " +
                      shape_string(x.shape()));
  }
  auto xv = x.values();
  std::vector<Scalar> out(shape_numel(out_shape), Scalar(0));
  for (std::size_t i = 0; i < offsets.size(); ++i) out[offsets[i]] = xv[i];
  return make_tensor("strided_scatter", out_shape, std::move(out), {x},
                     [x, offsets = std::move(offsets)](std::span<const Scalar> g, GradSink& sink) {
                       auto gx = sink.slot(x);
                       if (gx.empty()) return;
                       for (std::size_t i = 0; i < offsets.size(); ++i) gx[i] += g[offsets[i]];
                     });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  if (x.rank() == 0) throw TensorError("gather_rows on a scalar");
  const std::size_t n_rows = x.dim(0);
  const std::size_t width = n_rows ? x.size() / n_rows : shape_numel(Shape(x.shape().begin() + 1, x.shape().end()));
  Shape out_shape = x.shape();
  out_shape[0] = rows.size();
  auto xv = x.values();
  std::vector<Scalar> out(rows.size() * width, Scalar(0));
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] == kZeroRow) continue;
    if (rows[k] >= n_rows) throw TensorError("gather_rows: row index out of range");
    std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>(rows[k] * width), width,
                out.begin() + static_cast<std::ptrdiff_t>(k * width));
  }
  std::vector<std::size_t> index(rows.begin(), rows.end());
  return make_tensor("gather_rows", std::move(out_shape), std::move(out), {x},
                     [x, index = std::move(index), width](std::span<const Scalar> g, GradSink& sink) {
                       auto gx = sink.slot(x);
                       if (gx.empty()) return;
                       for (std::size_t k = 0; k < index.size(); ++k) {
                         if (index[k] == kZeroRow) continue;
                         for (std::size_t c = 0; c < width; ++c) gx[index[k] * width + c] += g[k * width + c];
                       }
                     });
}

Tensor scatter_rows(const Tensor& x, std::span<const std::size_t> rows, std::size_t out_rows) {
  if (x.rank() == 0 || x.dim(0) != rows.size()) throw TensorError("scatter_rows: one index per input row required");
  const std::size_t width = rows.empty() ? shape_numel(Shape(x.shape().begin() + 1, x.shape().end()))
                                         : x.size() / rows.size();
  Shape out_shape = x.shape();
  out_shape[0] = out_rows;
  auto xv = x.values();
  std::vector<Scalar> out(out_rows * width, Scalar(0));
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] == kZeroRow) continue;
    if (rows[k] >= out_rows) throw TensorError("scatter_rows: row index out of range");
    for (std::size_t c = 0; c < width; ++c) out[rows[k] * width + c] += xv[k * width + c];
  }
  std::vector<std::size_t> index(rows.begin(), rows.end());
  return make_tensor("scatter_rows", std::move(out_shape), std::move(out), {x},
                     [x, index = std::move(index), width](std::span<const Scalar> g, GradSink& sink) {
                       auto gx = sink.slot(x);
                       if (gx.empty()) return;
                       for (std::size_t k = 0; k < index.size(); ++k) {
                         if (index[k] == kZeroRow) continue;
                         for (std::size_t c = 0; c < width; ++c) gx[k * width + c] += g[index[k] * width + c];
                       }
                     });
}

Tensor gather_flat(const Tensor& x, std::span<const std::size_t> indices) {
  auto xv = x.values();
  std::vector<Scalar> out(indices.size());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= xv.size()) throw TensorError("gather_flat: index out of range");
    out[k] = xv[indices[k]];
  }
  std::vector<std::size_t> index(indices.begin(), indices.end());
  return make_tensor("gather_flat", {indices.size()}, std::move(out), {x},
                     [x, index = std::move(index)](std::span<const Scalar> g, GradSink& sink) {
                       auto gx = sink.slot(x);
                       if (gx.empty()) return;
                       for (std::size_t k = 0; k < index.size(); ++k) gx[index[k]] += g[k];
                     });
}

// ---------------------------------------------------------------------------
// Linear algebra and normalisation

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) throw TensorError("matmul: operands must have rank >= 2");
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  const std::size_t n = as[as.size() - 2], k = as.back();
  const std::size_t k2 = bs[bs.size() - 2], m = bs.back();
  if (k != k2) throw TensorError("matmul: inner dimension mismatch " + shape_string(as) + " x " + shape_string(bs));
  const bool shared_b = bs.size() == 2;
  if (!shared_b && (bs.size() != as.size() || !std::equal(as.begin(), as.end() - 2, bs.begin()))) {
    throw TensorError("matmul: batch dimensions differ");
  }
  const std::size_t batch = shape_numel(Shape(as.begin(), as.end() - 2));
  Shape out_shape(as.begin(), as.end() - 2);
  out_shape.push_back(n);
  out_shape.push_back(m);
  auto av = a.values(), bv = b.values();
  std::vector<Scalar> out(batch * n * m, Scalar(0));
  for (std::size_t bt = 0; bt < batch; ++bt) {
    const Scalar* A = av.data() + bt * n * k;
    const Scalar* B = bv.data() + (shared_b ? 0 : bt * k * m);
    Scalar* C = out.data() + bt * n * m;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        const Scalar aip = A[i * k + p];
        for (std::size_t j = 0; j < m; ++j) C[i * m + j] += aip * B[p * m + j];
      }
  }
  return make_tensor(
      "matmul", std::move(out_shape), std::move(out), {a, b},
      [a, b, batch, n, k, m, shared_b](std::span<const Scalar> g, GradSink& sink) {
        auto av = a.values(), bv = b.values();
        auto ga = sink.slot(a);
        auto gb = sink.slot(b);
        for (std::size_t bt = 0; bt < batch; ++bt) {
          const Scalar* A = av.data() + bt * n * k;
          const Scalar* B = bv.data() + (shared_b ? 0 : bt * k * m);
          const Scalar* G = g.data() + bt * n * m;
          if (!ga.empty()) {
            Scalar* GA = ga.data() + bt * n * k;
            for (std::size_t i = 0; i < n; ++i)
              for (std::size_t p = 0; p < k; ++p) {
                Scalar acc = 0;
                for (std::size_t j = 0; j < m; ++j) acc += G[i * m + j] * B[p * m + j];
                GA[i * k + p] += acc;
              }
          }
          if (!gb.empty()) {
            Scalar* GB = gb.data() + (shared_b ? 0 : bt * k * m);
            for (std::size_t i = 0; i < n; ++i)
              for (std::size_t p = 0; p < k; ++p) {
                const Scalar aip = A[i * k + p];
                for (std::size_t j = 0; j < m; ++j) GB[p * m + j] += aip * G[i * m + j];
              }
          }
        }
      });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() == 0 || weight.rank() != 2 || x.shape().back() != weight.dim(0)) {
    throw TensorError("linear: shape mismatch " + shape_string(x.shape()) + " x " + shape_string(weight.shape()));
  }
  const std::size_t in = weight.dim(0), out_ch = weight.dim(1);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != out_ch)) throw TensorError("linear: bias shape mismatch");
  const std::size_t rows = in ? x.size() / in : shape_numel(Shape(x.shape().begin(), x.shape().end() - 1));
  Shape out_shape = x.shape();
  out_shape.back() = out_ch;
  auto xv = x.values(), wv = weight.values();
  std::vector<Scalar> out(rows * out_ch, Scalar(0));
  for (std::size_t r = 0; r < rows; ++r) {
    Scalar* o = out.data() + r * out_ch;
    for (std::size_t i = 0; i < in; ++i) {
      const Scalar xi = xv[r * in + i];
      const Scalar* w = wv.data() + i * out_ch;
      for (std::size_t c = 0; c < out_ch; ++c) o[c] += xi * w[c];
    }
    if (bias.defined()) {
      auto bv = bias.values();
      for (std::size_t c = 0; c < out_ch; ++c) o[c] += bv[c];
    }
  }
  return make_tensor("linear", std::move(out_shape), std::move(out), {x, weight, bias},
                     [x, weight, bias, rows, in, out_ch](std::span<const Scalar> g, GradSink& sink) {
                       auto xv = x.values(), wv = weight.values();
                       auto gx = sink.slot(x);
                       auto gw = sink.slot(weight);
                       std::span<Scalar> gbias = bias.defined() ? sink.slot(bias) : std::span<Scalar>{};
                       for (std::size_t r = 0; r < rows; ++r) {
                         const Scalar* gr = g.data() + r * out_ch;
                         for (std::size_t i = 0; i < in; ++i) {
                           const Scalar* w = wv.data() + i * out_ch;
                           if (!gx.empty()) {
                             Scalar acc = 0;
                             for (std::size_t c = 0; c < out_ch; ++c) acc += gr[c] * w[c];
                             gx[r * in + i] += acc;
                           }
                           if (!gw.empty()) {
                             const Scalar xi = xv[r * in + i];
                             for (std::size_t c = 0; c < out_ch; ++c) gw[i * out_ch + c] += xi * gr[c];
                           }
                         }
                         for (std::size_t c = 0; c < gbias.size(); ++c) gbias[c] += gr[c];
                       }
                     });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) throw TensorError("softmax: axis out of range");
  auto split = split_at(x.shape(), axis);
  auto xv = x.values();
  std::vector<Scalar> out(x.size());
  for (std::size_t o = 0; o < split.outer; ++o)
    for (std::size_t i = 0; i < split.inner; ++i) {
      const std::size_t base = o * split.extent * split.inner + i;
      Scalar mx = -std::numeric_limits<Scalar>::infinity();
      for (std::size_t k = 0; k < split.extent; ++k) mx = std::max(mx, xv[base + k * split.inner]);
      Scalar total = 0;
      for (std::size_t k = 0; k < split.extent; ++k) {
        const Scalar e = std::exp(xv[base + k * split.inner] - mx);
        out[base + k * split.inner] = e;
        total += e;
      }
      for (std::size_t k = 0; k < split.extent; ++k) out[base + k * split.inner] /= total;
    }
  auto y = std::make_shared<std::vector<Scalar>>(out);
  return make_tensor("softmax", x.shape(), std::move(out), {x},
                     [x, y, split](std::span<const Scalar> g, GradSink& sink) {
                       auto gx = sink.slot(x);
                       if (gx.empty()) return;
                       for (std::size_t o = 0; o < split.outer; ++o)
                         for (std::size_t i = 0; i < split.inner; ++i) {
                           const std::size_t base = o * split.extent * split.inner + i;
                           Scalar dot = 0;
                           for (std::size_t k = 0; k < split.extent; ++k) {
                             const std::size_t at = base + k * split.inner;
                             dot += g[at] * (*y)[at];
                           }
                           for (std::size_t k = 0; k < split.extent; ++k) {
                             const std::size_t at = base + k * split.inner;
                             gx[at] += (*y)[at] * (g[at] - dot);
                           }
                         }
                     });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Scalar eps) {
  if (x.rank() == 0) throw TensorError("layer_norm on a scalar");
  const std::size_t width = x.shape().back();
  if (gamma.shape() != Shape{width} || beta.shape() != Shape{width}) {
    throw TensorError("layer_norm: scale/shift must have shape [" + std::to_string(width) + "]");
  }
  const std::size_t rows = width ? x.size() / width : 0;
  auto xv = x.values(), gv = gamma.values(), bv = beta.values();
  std::vector<Scalar> out(x.size());
  auto normed = std::make_shared<std::vector<Scalar>>(x.size());
  auto inv_std = std::make_shared<std::vector<Scalar>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const Scalar* row = xv.data() + r * width;
    Scalar mu = 0;
    for (std::size_t c = 0; c < width; ++c) mu += row[c];
    mu /= static_cast<Scalar>(width);
    Scalar var = 0;
    for (std::size_t c = 0; c < width; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= static_cast<Scalar>(width);
    const Scalar is = Scalar(1) / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t c = 0; c < width; ++c) {
      const Scalar xh = (row[c] - mu) * is;
      (*normed)[r * width + c] = xh;
      out[r * width + c] = xh * gv[c] + bv[c];
    }
  }
  return make_tensor(
      "layer_norm", x.shape(), std::move(out), {x, gamma, beta},
      [x, gamma, beta, normed, inv_std, rows, width](std::span<const Scalar> g, GradSink& sink) {
        auto gv = gamma.values();
        auto gx = sink.slot(x);
        auto ggamma = sink.slot(gamma);
        auto gbeta = sink.slot(beta);
        const Scalar inv_w = Scalar(1) / static_cast<Scalar>(width);
        for (std::size_t r = 0; r < rows; ++r) {
          const Scalar* gr = g.data() + r * width;
          const Scalar* xh = normed->data() + r * width;
          for (std::size_t c = 0; c < ggamma.size(); ++c) ggamma[c] += gr[c] * xh[c];
          for (std::size_t c = 0; c < gbeta.size(); ++c) gbeta[c] += gr[c];
          if (gx.empty()) continue;
          Scalar mean_d = 0, mean_dx = 0;
          for (std::size_t c = 0; c < width; ++c) {
            const Scalar d = gr[c] * gv[c];
            mean_d += d;
            mean_dx += d * xh[c];
          }
          mean_d *= inv_w;
          mean_dx *= inv_w;
          for (std::size_t c = 0; c < width; ++c) {
            const Scalar d = gr[c] * gv[c];
            gx[r * width + c] += (*inv_std)[r] * (d - mean_d - xh[c] * mean_dx);
          }
        }
      });
}

}  // namespace jmatch
