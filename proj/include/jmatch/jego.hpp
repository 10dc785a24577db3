#pragma once

#include <array>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "jmatch/ssm.hpp"
#include "jmatch/tensor.hpp"

namespace jmatch::jego {

// Feature maps are rank-3 tensors H x W x C. The pair is laid out on two joint
// grids: horizontal X^h = [A | B] (H x 2W) and vertical X^v = [A ; B] (2H x W).

enum class JointGrid { Horizontal, Vertical };

enum class ScanStyle {
  Jego,         // right, left, up, down
  ForwardOnly,  // the same four skip slices, all traversed forward
};

struct JointCoord {
  std::size_t row = 0;
  std::size_t col = 0;
  friend bool operator==(const JointCoord&, const JointCoord&) = default;
};

/// Position in one image of the pair; image 0 is A, 1 is B.
struct PairPos {
  std::size_t image = 0;
  std::size_t row = 0;
  std::size_t col = 0;
  friend bool operator==(const PairPos&, const PairPos&) = default;
};

struct ScanDirection {
  int index = 0;  // 1..4
  JointGrid grid = JointGrid::Horizontal;
  std::size_t row_offset = 0;  // m
  std::size_t col_offset = 0;  // n
  bool flipped = false;
  std::vector<JointCoord> order;   // traversal, flips applied
  std::vector<std::size_t> flat;   // order as row-major indices into the joint grid
};

/// Index permutations for the four directional sequences of an H x W pair.
struct ScanLayout {
  std::size_t height = 0;  // per-image grid
  std::size_t width = 0;
  std::size_t step = 2;
  bool images_swapped = false;  // to_pair labels the left/top half as the original B
  std::array<ScanDirection, 4> directions;

  std::size_t joint_rows(JointGrid g) const { return g == JointGrid::Horizontal ? height : 2 * height; }
  std::size_t joint_cols(JointGrid g) const { return g == JointGrid::Horizontal ? 2 * width : width; }
  std::size_t sequence_length() const { return directions[0].order.size(); }
  /// N = 2 * H * W.
  std::size_t token_count() const { return 2 * height * width; }

  PairPos to_pair(JointGrid g, JointCoord c) const;
  /// Flat pair index: image-major, then row-major (A rows first).
  std::size_t pair_index(const PairPos& p) const { return (p.image * height + p.row) * width + p.col; }
};

/// Start offsets of direction i (1-based): (floor((i-1)/2), (i-1) mod 2).
std::pair<std::size_t, std::size_t> start_offset(int direction);

/// Only step 2 is supported: four offset classes tile a 2x2 cell exactly.
ScanLayout build_layout(std::size_t height, std::size_t width, std::size_t step = 2,
                        ScanStyle style = ScanStyle::Jego);

/// The same traversal with the roles of A and B exchanged on both joint grids.
/// Run on (B, A), it visits every token in the same order as the original on (A, B).
ScanLayout relabel_images(const ScanLayout& layout);

/// Debug dump, one line per direction: "dir i: (m,n) flip len [(r,c) ...]".
std::string dump_layout(const ScanLayout& layout);

/// Returns (X^h, X^v).
std::pair<Tensor, Tensor> joint_concat(const Tensor& fa, const Tensor& fb);

/// Gathers the four directional sequences, each of length 2HW/p^2 x C.
std::array<Tensor, 4> jego_scan(const Tensor& xh, const Tensor& xv, const ScanLayout& layout);

/// Restores each sequence to its joint-grid slice, sums the horizontal and
/// vertical maps per image and returns (A, B).
std::pair<Tensor, Tensor> jego_merge(const std::array<Tensor, 4>& seqs, const ScanLayout& layout);

/// Gated 3x3 convolution unit.
struct AggregatorParams {
  Tensor gate_kernel, gate_bias;
  Tensor value_kernel, value_bias;
  Tensor out_kernel, out_bias;

  static AggregatorParams init(std::size_t channels, std::mt19937& rng);
  void collect(const std::string& prefix, NamedTensors& out) const;
};

/// out = conv(gelu(conv_gate(f)) * conv_value(f))
Tensor aggregate(const Tensor& f, const AggregatorParams& params);

struct JointMambaParams {
  std::array<ssm::SsmBlockParams, 4> blocks;
  AggregatorParams aggregator;

  static JointMambaParams init(const ssm::SsmDims& dims, std::mt19937& rng);
  void collect(const std::string& prefix, NamedTensors& out) const;
};

struct JointLayerOutput {
  Tensor a;
  Tensor b;
  std::size_t tokens = 0;  // tokens pushed through the four blocks
};

/// concat -> scan -> four blocks -> merge -> aggregate. Odd grids are
/// zero-padded to even extents and cropped back after the merge.
JointLayerOutput joint_mamba_layer(const Tensor& fa, const Tensor& fb, const JointMambaParams& params);

/// As above with a caller-supplied layout; the grid must already be even.
JointLayerOutput joint_mamba_layer(const Tensor& fa, const Tensor& fb, const JointMambaParams& params,
                                   const ScanLayout& layout);

}  // namespace jmatch::jego
