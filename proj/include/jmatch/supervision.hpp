#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "jmatch/image.hpp"
#include "jmatch/matcher.hpp"
#include "jmatch/tensor.hpp"

namespace jmatch::supervision {

using Mat3 = Eigen::Matrix3d;
using Vec3 = Eigen::Vector3d;

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PairSample {
  GrayImage a, b;
  Mat3 h = Mat3::Identity();  // pixel coordinates of A -> B
  Mat3 r = Mat3::Identity();
  Vec3 t = Vec3::Zero();      // unit length
  Mat3 k = Mat3::Identity();
  Mat3 e = Mat3::Zero();      // [t]x R
};

struct SynthOptions {
  std::size_t size = 96;       // side of A and B
  double max_rotation = 0.1;   // radians about the optical axis
  double max_tilt = 0.03;      // radians about x and y
  double max_scale = 0.1;      // zoom factor in [1 - s, 1 + s]
  double max_shift = 6.0;      // pixels
};

Mat3 cross_matrix(const Vec3& v);
Mat3 intrinsics(std::size_t size);

/// H = K (R + t n^T / d) K^-1 for the fronto-parallel plane n = (0, 0, 1), d = 1.
Mat3 plane_homography(const Mat3& k, const Mat3& r, const Vec3& t);

/// A is the centre crop of `base`; B samples `base` through H^-1. Returns
/// nothing for a zero translation, where E is undefined.
std::optional<PairSample> build_pair(const GrayImage& base, const Mat3& r, const Vec3& t, std::size_t size);

/// Draws poses until a non-degenerate one is found.
PairSample synth_pair(const GrayImage& base, std::mt19937& rng, const SynthOptions& options = {});

/// Procedural texture: value noise over several octaves plus random shapes.
GrayImage make_texture(std::size_t width, std::size_t height, std::uint32_t seed);

/// Applies a homography to a pixel coordinate.
Eigen::Vector2d warp_point(const Mat3& h, double x, double y);

struct FinePositive {
  std::size_t a = 0;  // cell in window A
  std::size_t b = 0;  // cell in window B
};

struct GroundTruth {
  std::size_t rows = 0, cols = 0;  // coarse grid of each image
  std::vector<matcher::CoarseMatch> coarse;  // positives (confidence 1), at most one per A cell
  std::vector<std::optional<FinePositive>> fine;  // aligned with `coarse`

  std::vector<std::uint8_t> dense() const;  // n_A x n_B, row-major
  std::size_t cells() const { return rows * cols; }
};

/// Coarse anchors sit at pixel 8 * cell; fine anchors at 2 * cell. A coarse
/// positive needs the projected anchor inside B and within half a coarse cell
/// of the nearest B anchor; the fine positive pairs the window centre of A with
/// the nearest fine cell of B if that is closer than one fine cell.
GroundTruth gt_from_warp(const Mat3& h, std::size_t rows, std::size_t cols, std::size_t window = 5);

inline constexpr Scalar kFocalAlpha = Scalar(0.25);
inline constexpr Scalar kFocalGamma = Scalar(2);

/// Mean of -alpha (1 - p)^gamma log p over the listed flat positions; zero if none.
Tensor focal_loss(const Tensor& p, std::span<const std::size_t> positives, Scalar alpha = kFocalAlpha,
                  Scalar gamma = kFocalGamma);

/// FL(P_ab) + FL(P_ba) over the coarse positives.
Tensor coarse_loss(const Tensor& p_ab, const Tensor& p_ba, const GroundTruth& gt);

/// Focal loss over one positive per window; `windows` lists the index into
/// gt.coarse used for each window of `p_f` (M x w^2 x w^2).
Tensor fine_loss(const Tensor& p_f, const GroundTruth& gt, std::span<const std::size_t> windows);

struct EpipolarResult {
  Tensor loss;
  bool empty = false;
};

/// Symmetric epipolar distance for homogeneous normalised points x (in B) and
/// y (in A), both K x 3: mean of (x^T E y)^2 (1 / |E^T x|^2_2 + 1 / |E y|^2_2).
EpipolarResult epipolar_loss(const Tensor& x, const Tensor& y, const Mat3& e);

/// Pixel coordinates K x 4 (x_A, y_A, x_B, y_B) normalised with `k` first.
EpipolarResult epipolar_loss_pixels(const Tensor& coords, const Mat3& k, const Mat3& e);

struct LossTerms {
  Tensor coarse, fine, subpixel, total;
  std::size_t positives = 0;
};

struct LossWeights {
  Scalar coarse = 1, fine = 1, subpixel = 1;
};

/// Forward pass with teacher forcing: fine windows follow the ground-truth
/// coarse positives and refinement the ground-truth fine cells. At most
/// `max_windows` positives are used, evenly spaced.
LossTerms pair_loss(const PairSample& sample, const GroundTruth& gt, const matcher::MatcherWeights& weights,
                    const matcher::MatcherConfig& config, const LossWeights& loss_weights = {},
                    std::size_t max_windows = 64);

/// Share of predicted coarse matches whose A anchor lands within one coarse
/// cell of the B anchor; 0 when nothing is predicted.
double coarse_precision(const matcher::MatchSet& matches, const Mat3& h);

/// Linear warm-up from 0 to `base` over `warmup` steps, cosine decay to 0 by `total`.
double learning_rate(std::size_t step, double base, std::size_t warmup, std::size_t total);

struct TrainConfig {
  std::uint32_t seed = 0;
  std::size_t steps = 200;
  std::size_t train_pairs = 16;
  std::size_t val_pairs = 8;
  double learning_rate = 0.05;
  double momentum = 0.95;
  std::size_t batch_size = 1;      // pairs averaged per step
  std::size_t warmup_epochs = 1;
  double grad_clip = 1.0;         // global norm, 0 disables
  std::size_t max_windows = 64;
  LossWeights loss_weights;
  SynthOptions synth;
  matcher::MatcherConfig matcher;
};

struct EpochLog {
  std::size_t epoch = 0;
  double loss_c = 0, loss_f = 0, loss_s = 0;
  double precision = 0;
};

struct TrainResult {
  matcher::MatcherWeights weights;
  std::vector<EpochLog> log;
  double initial_loss = 0;  // mean total loss over the training pairs
  double final_loss = 0;
  double final_precision = 0;
};

/// Sorted *.pgm files of a corpus directory.
std::vector<std::filesystem::path> list_corpus(const std::filesystem::path& dir);

/// Base images split into training and held-out sets (last fifth held out).
struct Corpus {
  std::vector<GrayImage> train, held_out;
};
Corpus load_corpus(const std::filesystem::path& dir, std::size_t min_images = 8);

/// Epoch 0 of the log is the evaluation before the first step. An epoch is
/// one shuffled pass over the training pairs.
TrainResult train(const Corpus& corpus, const TrainConfig& config, std::ostream* progress = nullptr);

void write_metrics(std::ostream& os, const std::vector<EpochLog>& log);

}  // namespace jmatch::supervision
