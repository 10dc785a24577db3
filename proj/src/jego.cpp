#include "jmatch/jego.hpp"

#include <algorithm>
#include <sstream>

namespace jmatch::jego {

std::pair<std::size_t, std::size_t> start_offset(int direction) {
  if (direction < 1 || direction > 4) throw TensorError("direction index must be in 1..4");
  const auto k = static_cast<std::size_t>(direction - 1);
  return {k / 2, k % 2};
}

PairPos ScanLayout::to_pair(JointGrid g, JointCoord c) const {
  PairPos p;
  if (g == JointGrid::Horizontal) {
    p = {c.col >= width ? 1u : 0u, c.row, c.col % width};
  } else {
    p = {c.row >= height ? 1u : 0u, c.row % height, c.col};
  }
  if (images_swapped) p.image = 1 - p.image;
  return p;
}

ScanLayout build_layout(std::size_t height, std::size_t width, std::size_t step, ScanStyle style) {
  if (step != 2) throw TensorError("build_layout: only skip step 2 yields four covering directions");
  if (height % step != 0 || width % step != 0) {
    throw TensorError("build_layout: grid " + std::to_string(height) + "x" + std::to_string(width) +
                      " is not divisible by the skip step; pad first");
  }
  ScanLayout layout;
  layout.height = height;
  layout.width = width;
  layout.step = step;
  for (int i = 1; i <= 4; ++i) {
    ScanDirection& d = layout.directions[static_cast<std::size_t>(i - 1)];
    d.index = i;
    d.grid = i <= 2 ? JointGrid::Horizontal : JointGrid::Vertical;
    std::tie(d.row_offset, d.col_offset) = start_offset(i);
    const std::size_t rows = layout.joint_rows(d.grid), cols = layout.joint_cols(d.grid);
    if (d.grid == JointGrid::Horizontal) {
      for (std::size_t r = d.row_offset; r < rows; r += step)
        for (std::size_t c = d.col_offset; c < cols; c += step) d.order.push_back({r, c});
    } else {
      for (std::size_t c = d.col_offset; c < cols; c += step)
        for (std::size_t r = d.row_offset; r < rows; r += step) d.order.push_back({r, c});
    }
    // Right (1) and down (4) run forward; left (2) and up (3) are reversed.
    d.flipped = style == ScanStyle::Jego && (i == 2 || i == 3);
    if (d.flipped) std::reverse(d.order.begin(), d.order.end());
    d.flat.reserve(d.order.size());
    for (const auto& c : d.order) d.flat.push_back(c.row * cols + c.col);
  }
  return layout;
}

ScanLayout relabel_images(const ScanLayout& layout) {
  ScanLayout out = layout;
  out.images_swapped = !layout.images_swapped;
  for (auto& d : out.directions) {
    const std::size_t rows = out.joint_rows(d.grid), cols = out.joint_cols(d.grid);
    for (auto& c : d.order) {
      if (d.grid == JointGrid::Horizontal) {
        c.col = (c.col + layout.width) % cols;
      } else {
        c.row = (c.row + layout.height) % rows;
      }
    }
    for (std::size_t k = 0; k < d.order.size(); ++k) d.flat[k] = d.order[k].row * cols + d.order[k].col;
  }
  return out;
}

std::string dump_layout(const ScanLayout& layout) {
  std::ostringstream os;
  for (const auto& d : layout.directions) {
    os << "dir " << d.index << ": (" << d.row_offset << ',' << d.col_offset << ") " << (d.flipped ? 1 : 0) << ' '
       << d.order.size() << " [";
    for (std::size_t k = 0; k < d.order.size(); ++k) {
      os << (k ? " " : "") << '(' << d.order[k].row << ',' << d.order[k].col << ')';
    }
    os << "]\n";
  }
  return os.str();
}

std::pair<Tensor, Tensor> joint_concat(const Tensor& fa, const Tensor& fb) {
  if (fa.rank() != 3 || fa.shape() != fb.shape()) {
    throw TensorError("joint_concat: feature maps must share an H x W x C shape, got " + shape_string(fa.shape()) +
                      " and " + shape_string(fb.shape()));
  }
  return {concat({fa, fb}, 1), concat({fa, fb}, 0)};
}

std::array<Tensor, 4> jego_scan(const Tensor& xh, const Tensor& xv, const ScanLayout& layout) {
  const std::size_t h = layout.height, w = layout.width;
  if (xh.rank() != 3 || xv.rank() != 3 || xh.dim(0) != h || xh.dim(1) != 2 * w || xv.dim(0) != 2 * h ||
      xv.dim(1) != w || xh.dim(2) != xv.dim(2)) {
    throw TensorError("jego_scan: joint maps " + shape_string(xh.shape()) + ", " + shape_string(xv.shape()) +
                      " do not match the layout");
  }
  const std::size_t c = xh.dim(2);
  const Tensor rows_h = reshape(xh, {2 * h * w, c});
  const Tensor rows_v = reshape(xv, {2 * h * w, c});
  std::array<Tensor, 4> seqs;
  for (std::size_t i = 0; i < 4; ++i) {
    const auto& d = layout.directions[i];
    seqs[i] = gather_rows(d.grid == JointGrid::Horizontal ? rows_h : rows_v, d.flat);
  }
  return seqs;
}

std::pair<Tensor, Tensor> jego_merge(const std::array<Tensor, 4>& seqs, const ScanLayout& layout) {
  const std::size_t h = layout.height, w = layout.width;
  const std::size_t c = seqs[0].rank() == 2 ? seqs[0].dim(1) : 0;
  for (std::size_t i = 0; i < 4; ++i) {
    if (seqs[i].rank() != 2 || seqs[i].dim(0) != layout.directions[i].flat.size() || seqs[i].dim(1) != c) {
      throw TensorError("jego_merge: sequence " + std::to_string(i + 1) + " has shape " +
                        shape_string(seqs[i].shape()) + ", layout expects " +
                        std::to_string(layout.directions[i].flat.size()) + " tokens");
    }
  }
  const std::size_t cells = 2 * h * w;
  // Scattering with the traversal indices undoes the flips as well.
  const Tensor yh = reshape(add(scatter_rows(seqs[0], layout.directions[0].flat, cells),
                                scatter_rows(seqs[1], layout.directions[1].flat, cells)),
                            {h, 2 * w, c});
  const Tensor yv = reshape(add(scatter_rows(seqs[2], layout.directions[2].flat, cells),
                                scatter_rows(seqs[3], layout.directions[3].flat, cells)),
                            {2 * h, w, c});
  // Halves follow the call's input order; a relabelled layout only moves the scan.
  return {add(narrow(yh, 1, 0, w), narrow(yv, 0, 0, h)), add(narrow(yh, 1, w, w), narrow(yv, 0, h, h))};
}

// Keeps activations near unit scale through the gated product.
constexpr double kHeGain = 2.449489742783178;

AggregatorParams AggregatorParams::init(std::size_t channels, std::mt19937& rng) {
  const std::size_t fan_in = 9 * channels;
  AggregatorParams p;
  p.gate_kernel = uniform_parameter({3, 3, channels, channels}, fan_in, rng, kHeGain);
  p.gate_bias = Tensor::parameter({channels}, std::vector<Scalar>(channels, Scalar(0)));
  p.value_kernel = uniform_parameter({3, 3, channels, channels}, fan_in, rng, kHeGain);
  p.value_bias = Tensor::parameter({channels}, std::vector<Scalar>(channels, Scalar(0)));
  p.out_kernel = uniform_parameter({3, 3, channels, channels}, fan_in, rng, kHeGain);
  p.out_bias = Tensor::parameter({channels}, std::vector<Scalar>(channels, Scalar(0)));
  return p;
}

void AggregatorParams::collect(const std::string& prefix, NamedTensors& out) const {
  out.emplace_back(prefix + "gate_kernel", gate_kernel);
  out.emplace_back(prefix + "gate_bias", gate_bias);
  out.emplace_back(prefix + "value_kernel", value_kernel);
  out.emplace_back(prefix + "value_bias", value_bias);
  out.emplace_back(prefix + "out_kernel", out_kernel);
  out.emplace_back(prefix + "out_bias", out_bias);
}

Tensor aggregate(const Tensor& f, const AggregatorParams& p) {
  const Tensor gate = gelu(conv2d(f, p.gate_kernel, p.gate_bias));
  const Tensor value = conv2d(f, p.value_kernel, p.value_bias);
  return conv2d(mul(gate, value), p.out_kernel, p.out_bias);
}

JointMambaParams JointMambaParams::init(const ssm::SsmDims& dims, std::mt19937& rng) {
  JointMambaParams p;
  for (auto& b : p.blocks) b = ssm::SsmBlockParams::init(dims, rng);
  p.aggregator = AggregatorParams::init(dims.model, rng);
  return p;
}

void JointMambaParams::collect(const std::string& prefix, NamedTensors& out) const {
  for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(prefix + "block" + std::to_string(i + 1) + ".", out);
  aggregator.collect(prefix + "aggregator.", out);
}

namespace {

struct Merged {
  Tensor a, b;
  std::size_t tokens = 0;
};

Merged scan_mix_merge(const Tensor& fa, const Tensor& fb, const JointMambaParams& params, const ScanLayout& layout) {
  const auto [xh, xv] = joint_concat(fa, fb);
  const auto seqs = jego_scan(xh, xv, layout);
  std::array<Tensor, 4> mixed;
  std::size_t tokens = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    mixed[i] = ssm::mamba_block(seqs[i], params.blocks[i]);
    tokens += seqs[i].dim(0);
  }
  auto [a, b] = jego_merge(mixed, layout);
  return {a, b, tokens};
}

Tensor pad_to(const Tensor& f, std::size_t h, std::size_t w) {
  Tensor out = f;
  const std::size_t c = f.dim(2);
  if (f.dim(0) < h) out = concat({out, Tensor::zeros({h - f.dim(0), out.dim(1), c})}, 0);
  if (f.dim(1) < w) out = concat({out, Tensor::zeros({h, w - f.dim(1), c})}, 1);
  return out;
}

}  // namespace

JointLayerOutput joint_mamba_layer(const Tensor& fa, const Tensor& fb, const JointMambaParams& params,
                                   const ScanLayout& layout) {
  const Merged m = scan_mix_merge(fa, fb, params, layout);
  return {aggregate(m.a, params.aggregator), aggregate(m.b, params.aggregator), m.tokens};
}

JointLayerOutput joint_mamba_layer(const Tensor& fa, const Tensor& fb, const JointMambaParams& params) {
  if (fa.rank() != 3 || fa.shape() != fb.shape()) throw TensorError("joint_mamba_layer: feature map shape mismatch");
  const std::size_t h = fa.dim(0), w = fa.dim(1);
  const std::size_t hp = h + h % 2, wp = w + w % 2;
  const ScanLayout layout = build_layout(hp, wp);
  if (hp == h && wp == w) return joint_mamba_layer(fa, fb, params, layout);

  Merged m = scan_mix_merge(pad_to(fa, hp, wp), pad_to(fb, hp, wp), params, layout);
  const Tensor a = narrow(narrow(m.a, 0, 0, h), 1, 0, w);
  const Tensor b = narrow(narrow(m.b, 0, 0, h), 1, 0, w);
  return {aggregate(a, params.aggregator), aggregate(b, params.aggregator), m.tokens};
}

}  // namespace jmatch::jego
