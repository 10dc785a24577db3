#pragma once

#include <array>
#include <iosfwd>
#include <random>
#include <string>
#include <vector>

#include "jmatch/image.hpp"
#include "jmatch/jego.hpp"
#include "jmatch/ssm.hpp"
#include "jmatch/tensor.hpp"

namespace jmatch::matcher {

inline constexpr std::size_t kCoarseStride = 8;  // pixels per coarse cell
inline constexpr std::size_t kFineStride = 2;    // pixels per fine cell
inline constexpr std::size_t kFinePerCoarse = kCoarseStride / kFineStride;

struct MatcherConfig {
  Scalar temperature = Scalar(0.1);
  Scalar coarse_threshold = Scalar(0.2);
  std::size_t fine_window = 5;
  std::size_t coarse_channels = 48;  // C1
  std::size_t fine_channels = 16;    // C2
  std::size_t expand_channels = 64;  // C_e
  std::size_t state_channels = 8;    // C_s
  std::size_t layers = 1;            // stacked joint layers, four directional blocks each
  std::size_t token_hidden = 64;     // hidden width of token-mixing MLPs
  /// Sub-pixel offsets span +-offset_scale fine cells.
  Scalar offset_scale = Scalar(1);

  ssm::SsmDims ssm_dims() const { return {coarse_channels, expand_channels, state_channels, 4}; }
  std::size_t window_cells() const { return fine_window * fine_window; }
  void validate() const;
};

struct EncoderParams {
  // stride 2 -> stride 1 (fine head) -> stride 2 -> stride 2 (coarse head)
  std::array<Tensor, 4> kernels;
  std::array<Tensor, 4> biases;

  static EncoderParams init(const MatcherConfig& config, std::mt19937& rng);
  void collect(const std::string& prefix, NamedTensors& out) const;
};

struct PyramidFeatures {
  Tensor coarse;  // H/8 x W/8 x C1
  Tensor fine;    // H/2 x W/2 x C2
  std::size_t width = 0;  // original image size
  std::size_t height = 0;
};

/// Input is zero-padded to multiples of 8 before encoding.
PyramidFeatures encode(const GrayImage& image, const EncoderParams& params);

/// F_out = F_mid + MLP_c(F_mid), F_mid = F + MLP_s(F), over M x T x C input.
struct MixerParams {
  std::size_t tokens = 0;
  std::size_t channels = 0;
  Tensor token_w1, token_b1, token_w2, token_b2;
  Tensor channel_w1, channel_b1, channel_w2, channel_b2;

  static MixerParams init(std::size_t tokens, std::size_t channels, std::size_t token_hidden,
                          std::size_t channel_hidden, std::mt19937& rng);
  void collect(const std::string& prefix, NamedTensors& out) const;
};

Tensor mixer(const Tensor& tokens, const MixerParams& params);

struct MatcherWeights {
  EncoderParams encoder;
  std::vector<jego::JointMambaParams> layers;
  MixerParams fine_mixer;    // 2 windows concatenated along tokens
  MixerParams refine_mixer;  // one token, both features along channels
  Tensor refine_weight;      // 2C2 x 4
  Tensor refine_bias;        // 4

  static MatcherWeights init(const MatcherConfig& config, std::uint32_t seed);
  NamedTensors named() const;
  std::vector<Tensor> parameters() const;
};

/// S_c = <F_A(i), F_B(j)> / temperature for flattened n x C features.
Tensor coarse_similarity(const Tensor& fa, const Tensor& fb, Scalar temperature);

struct CoarseMatch {
  std::size_t i = 0;  // row-major index on the coarse grid of A
  std::size_t j = 0;  // same for B
  Scalar confidence = 0;
  friend bool operator==(const CoarseMatch&, const CoarseMatch&) = default;
};

/// Union of row maxima of the row softmax and column maxima of the column
/// softmax that reach `threshold`; one entry per pair, sorted by (i, j).
std::vector<CoarseMatch> select_coarse(const Tensor& p_ab, const Tensor& p_ba, Scalar threshold);
std::vector<CoarseMatch> coarse_match(const Tensor& similarity, Scalar threshold);

struct WindowSet {
  Tensor features;  // M x w^2 x C
  std::size_t window = 5;
  std::vector<std::array<long, 2>> centers;  // (row, col) on the fine grid

  /// Absolute fine-grid (row, col) of cell k in window m; may lie outside the map.
  std::array<long, 2> cell(std::size_t m, std::size_t k) const;
};

/// Crops w x w windows around `centers` (fine-grid row, col), zero outside.
WindowSet crop_windows(const Tensor& fine, const std::vector<std::array<long, 2>>& centers, std::size_t window);

/// Fine-grid centre of the window for a coarse cell.
std::array<long, 2> fine_center(std::size_t coarse_index, std::size_t coarse_width);

struct FineMatch {
  std::size_t coarse_index = 0;  // position in the window list
  std::size_t a = 0;             // cell within window A
  std::size_t b = 0;             // cell within window B
  Scalar confidence = 0;
};

struct FineResult {
  Tensor mixed_a;      // M x w^2 x C2 after mixing
  Tensor mixed_b;
  Tensor probability;  // M x w^2 x w^2, dual softmax
  std::vector<FineMatch> matches;
};

/// Mixes both windows jointly, scores every cell pair (features scaled by
/// C2^-1/2) and keeps the mutual nearest neighbour with the highest
/// probability per window pair.
FineResult fine_match(const WindowSet& a, const WindowSet& b, const MixerParams& mixer_params, Scalar temperature);

/// Dual-softmax scores for already mixed windows.
Tensor fine_probability(const Tensor& mixed_a, const Tensor& mixed_b, Scalar temperature);

struct PointPair {
  Scalar xa = 0, ya = 0, xb = 0, yb = 0;
};

struct SubpixelResult {
  Tensor offsets;  // K x 4 in [-1, 1]: dx_A, dy_A, dx_B, dy_B
  Tensor coords;   // K x 4 pixel coordinates before clamping
  std::vector<PointPair> points;  // clamped to the image
};

/// Regresses bounded offsets for the chosen cells. `cells` holds
/// (window index, cell in A, cell in B) triples.
SubpixelResult subpixel_refine(const FineResult& fine, const WindowSet& wa, const WindowSet& wb,
                               const std::vector<std::array<std::size_t, 3>>& cells, const MatcherWeights& weights,
                               const MatcherConfig& config, std::size_t width, std::size_t height);

struct MatchSet {
  std::size_t coarse_width = 0;  // coarse grid width shared by A and B
  std::vector<CoarseMatch> coarse;
  std::vector<FineMatch> fine;
  std::vector<PointPair> fine_points;  // fine-cell pixel positions
  std::vector<PointPair> subpixel;     // one per fine match

  bool empty() const { return coarse.empty(); }
};

/// Full inference pass; images must share a size. Runs without recording a graph.
MatchSet match_pair(const GrayImage& a, const GrayImage& b, const MatcherWeights& weights,
                    const MatcherConfig& config);

/// Coarse features of both images after the joint layers, flattened n x C1
/// and scaled by C1^-1/2.
struct CoarseFeatures {
  PyramidFeatures a, b;
  Tensor flat_a, flat_b;
  std::size_t rows = 0, cols = 0;
  std::size_t tokens = 0;
};

CoarseFeatures coarse_features(const GrayImage& a, const GrayImage& b, const MatcherWeights& weights,
                               const MatcherConfig& config);

/// "x_A y_A x_B y_B conf level" records, coarse then fine then subpixel.
void write_matches(std::ostream& os, const MatchSet& matches);

}  // namespace jmatch::matcher
