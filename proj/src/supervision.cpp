#include "jmatch/supervision.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <ostream>

namespace jmatch::supervision {

namespace ms = jmatch::matcher;

Mat3 cross_matrix(const Vec3& v) {
  Mat3 m;
  m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return m;
}

Mat3 intrinsics(std::size_t size) {
  const double f = static_cast<double>(size);
  const double c = (static_cast<double>(size) - 1) / 2;
  Mat3 k;
  k << f, 0, c, 0, f, c, 0, 0, 1;
  return k;
}

Mat3 plane_homography(const Mat3& k, const Mat3& r, const Vec3& t) {
  const Vec3 n(0, 0, 1);
  return k * (r + t * n.transpose()) * k.inverse();
}

Eigen::Vector2d warp_point(const Mat3& h, double x, double y) {
  const Vec3 p = h * Vec3(x, y, 1);
  return {p.x() / p.z(), p.y() / p.z()};
}

std::optional<PairSample> build_pair(const GrayImage& base, const Mat3& r, const Vec3& t, std::size_t size) {
  if (base.width < size || base.height < size) {
    throw ImageError("base image must be at least " + std::to_string(size) + "x" + std::to_string(size));
  }
  if (t.norm() < 1e-9) return std::nullopt;
  PairSample s;
  s.k = intrinsics(size);
  s.r = r;
  s.h = plane_homography(s.k, r, t);
  if (std::abs(s.h.determinant()) < 1e-9) return std::nullopt;
  s.t = t.normalized();
  s.e = cross_matrix(s.t) * r;
  s.a = center_crop(base, size, size);

  const double ox = static_cast<double>((static_cast<long long>(base.width) - static_cast<long long>(size)) / 2);
  const double oy = static_cast<double>((static_cast<long long>(base.height) - static_cast<long long>(size)) / 2);
  const Mat3 inv = s.h.inverse();
  s.b = GrayImage(size, size);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const auto q = warp_point(inv, static_cast<double>(x), static_cast<double>(y));
      s.b.at(x, y) = base.sample(q.x() + ox, q.y() + oy);
    }
  return s;
}

PairSample synth_pair(const GrayImage& base, std::mt19937& rng, const SynthOptions& o) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double f = static_cast<double>(o.size);
  for (;;) {
    const double yaw = u(rng) * o.max_rotation;
    const double tilt_x = u(rng) * o.max_tilt;
    const double tilt_y = u(rng) * o.max_tilt;
    const double zoom = 1.0 + u(rng) * o.max_scale;
    const double sx = u(rng) * o.max_shift, sy = u(rng) * o.max_shift;
    const Mat3 r = (Eigen::AngleAxisd(yaw, Vec3::UnitZ()) * Eigen::AngleAxisd(tilt_x, Vec3::UnitX()) *
                    Eigen::AngleAxisd(tilt_y, Vec3::UnitY()))
                       .toRotationMatrix();
    const Vec3 t(sx / f, sy / f, 1.0 / zoom - 1.0);
    if (auto s = build_pair(base, r, t, o.size)) return *std::move(s);
  }
}

GrayImage make_texture(std::size_t width, std::size_t height, std::uint32_t seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> acc(width * height, 0.0);

  const std::array<std::pair<std::size_t, double>, 4> octaves{{{32, 1.0}, {16, 0.7}, {8, 0.5}, {4, 0.35}}};
  for (const auto& [cell, amp] : octaves) {
    const std::size_t gw = width / cell + 2, gh = height / cell + 2;
    std::vector<double> grid(gw * gh);
    for (auto& g : grid) g = u(rng);
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x) {
        const double fx = static_cast<double>(x) / cell, fy = static_cast<double>(y) / cell;
        const auto x0 = static_cast<std::size_t>(fx), y0 = static_cast<std::size_t>(fy);
        auto smooth = [](double v) { return v * v * (3 - 2 * v); };
        const double ax = smooth(fx - x0), ay = smooth(fy - y0);
        const double top = grid[y0 * gw + x0] * (1 - ax) + grid[y0 * gw + x0 + 1] * ax;
        const double bottom = grid[(y0 + 1) * gw + x0] * (1 - ax) + grid[(y0 + 1) * gw + x0 + 1] * ax;
        acc[y * width + x] += amp * (top * (1 - ay) + bottom * ay);
      }
  }

  const std::size_t shapes = width * height / 400;
  for (std::size_t k = 0; k < shapes; ++k) {
    const double cx = u(rng) * width, cy = u(rng) * height;
    const double radius = 2 + u(rng) * 8;
    const double level = (u(rng) * 2 - 1) * 1.5;
    const bool disk = u(rng) < 0.5;
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x) {
        const double dx = x - cx, dy = y - cy;
        const bool inside = disk ? dx * dx + dy * dy <= radius * radius
                                 : std::abs(dx) <= radius && std::abs(dy) <= radius * 0.6;
        if (inside) acc[y * width + x] += level;
      }
  }

  const auto [lo, hi] = std::minmax_element(acc.begin(), acc.end());
  const double span = std::max(*hi - *lo, 1e-12);
  GrayImage img(width, height);
  for (std::size_t i = 0; i < acc.size(); ++i) img.pixels[i] = static_cast<float>(std::round((acc[i] - *lo) / span * 255));
  return img;
}

std::vector<std::uint8_t> GroundTruth::dense() const {
  std::vector<std::uint8_t> m(cells() * cells(), 0);
  for (const auto& c : coarse) m[c.i * cells() + c.j] = 1;
  return m;
}

GroundTruth gt_from_warp(const Mat3& h, std::size_t rows, std::size_t cols, std::size_t window) {
  GroundTruth gt;
  gt.rows = rows;
  gt.cols = cols;
  const double cs = static_cast<double>(ms::kCoarseStride), fs = static_cast<double>(ms::kFineStride);
  const double width = cs * cols, height = cs * rows;
  const long half = static_cast<long>(window / 2);
  for (std::size_t i = 0; i < rows * cols; ++i) {
    const double ax = cs * (i % cols), ay = cs * (i / cols);
    const auto p = warp_point(h, ax, ay);
    if (!std::isfinite(p.x()) || !std::isfinite(p.y())) continue;
    if (p.x() < 0 || p.y() < 0 || p.x() > width - 1 || p.y() > height - 1) continue;
    const long bc = std::lround(p.x() / cs), br = std::lround(p.y() / cs);
    if (bc < 0 || br < 0 || bc >= static_cast<long>(cols) || br >= static_cast<long>(rows)) continue;
    if (std::hypot(p.x() - cs * bc, p.y() - cs * br) >= cs / 2) continue;
    const std::size_t j = static_cast<std::size_t>(br) * cols + static_cast<std::size_t>(bc);
    gt.coarse.push_back({i, j, Scalar(1)});

    const long fc = std::lround(p.x() / fs), fr = std::lround(p.y() / fs);
    const long dr = fr - br * static_cast<long>(ms::kFinePerCoarse);
    const long dc = fc - bc * static_cast<long>(ms::kFinePerCoarse);
    std::optional<FinePositive> fine;
    if (std::abs(dr) <= half && std::abs(dc) <= half && std::hypot(p.x() - fs * fc, p.y() - fs * fr) < fs) {
      fine = FinePositive{window * window / 2, static_cast<std::size_t>((dr + half) * static_cast<long>(window) + dc + half)};
    }
    gt.fine.push_back(fine);
  }
  return gt;
}

Tensor focal_loss(const Tensor& p, std::span<const std::size_t> positives, Scalar alpha, Scalar gamma) {
  if (positives.empty()) return Tensor::scalar(0);
  const Tensor g = clamp_min(gather_flat(p, positives), Scalar(1e-8));
  const Tensor weight = pow(add_scalar(scale(g, Scalar(-1)), Scalar(1)), gamma);
  return scale(mean(mul(weight, log(g))), -alpha);
}

Tensor coarse_loss(const Tensor& p_ab, const Tensor& p_ba, const GroundTruth& gt) {
  std::vector<std::size_t> pos;
  for (const auto& c : gt.coarse) pos.push_back(c.i * p_ab.dim(1) + c.j);
  return add(focal_loss(p_ab, pos), focal_loss(p_ba, pos));
}

Tensor fine_loss(const Tensor& p_f, const GroundTruth& gt, std::span<const std::size_t> windows) {
  if (p_f.rank() != 3 || p_f.dim(0) != windows.size()) throw TensorError("fine_loss: one window index per window");
  const std::size_t cells = p_f.dim(1);
  std::vector<std::size_t> pos;
  for (std::size_t m = 0; m < windows.size(); ++m) {
    const auto& f = gt.fine.at(windows[m]);
    if (f) pos.push_back((m * cells + f->a) * cells + f->b);
  }
  return focal_loss(p_f, pos);
}

namespace {

Tensor matrix_tensor(const Mat3& m) {
  std::vector<Scalar> v(9);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) v[r * 3 + c] = static_cast<Scalar>(m(r, c));
  return Tensor::from_values({3, 3}, std::move(v));
}

}  // namespace

EpipolarResult epipolar_loss(const Tensor& x, const Tensor& y, const Mat3& e) {
  if (x.rank() != 2 || x.shape() != y.shape() || x.dim(1) != 3) throw TensorError("epipolar_loss: expected K x 3 points");
  if (x.dim(0) == 0) return {Tensor::scalar(0), true};
  const Tensor em = matrix_tensor(e);
  const Tensor ey = matmul(y, transpose_last2(em));  // rows (E y)^T
  const Tensor etx = matmul(x, em);                  // rows (E^T x)^T
  const Tensor residual = square(sum_last(mul(x, ey)));
  const Scalar guard = Scalar(1e-9);
  const Tensor inv_a = reciprocal(add_scalar(sum_last(square(narrow(etx, 1, 0, 2))), guard));
  const Tensor inv_b = reciprocal(add_scalar(sum_last(square(narrow(ey, 1, 0, 2))), guard));
  return {mean(mul(residual, add(inv_a, inv_b))), false};
}

EpipolarResult epipolar_loss_pixels(const Tensor& coords, const Mat3& k, const Mat3& e) {
  if (coords.rank() != 2 || coords.dim(1) != 4) throw TensorError("epipolar_loss_pixels: expected K x 4 coordinates");
  const std::size_t n = coords.dim(0);
  if (n == 0) return {Tensor::scalar(0), true};
  const Tensor w = Tensor::from_values({2, 2}, {static_cast<Scalar>(1 / k(0, 0)), 0, 0, static_cast<Scalar>(1 / k(1, 1))});
  const Tensor bias = Tensor::from_values({2}, {static_cast<Scalar>(-k(0, 2) / k(0, 0)), static_cast<Scalar>(-k(1, 2) / k(1, 1))});
  const Tensor ones = Tensor::full({n, 1}, Scalar(1));
  const Tensor ya = concat({linear(narrow(coords, 1, 0, 2), w, bias), ones}, 1);
  const Tensor xb = concat({linear(narrow(coords, 1, 2, 2), w, bias), ones}, 1);
  return epipolar_loss(xb, ya, e);
}

LossTerms pair_loss(const PairSample& sample, const GroundTruth& gt, const ms::MatcherWeights& weights,
                    const ms::MatcherConfig& config, const LossWeights& lw, std::size_t max_windows) {
  const auto feats = ms::coarse_features(sample.a, sample.b, weights, config);
  if (feats.rows != gt.rows || feats.cols != gt.cols) throw TensorError("pair_loss: ground truth grid mismatch");
  const Tensor sim = ms::coarse_similarity(feats.flat_a, feats.flat_b, config.temperature);
  LossTerms out;
  out.coarse = coarse_loss(softmax(sim, 1), softmax(sim, 0), gt);

  std::vector<std::size_t> valid;
  for (std::size_t k = 0; k < gt.coarse.size(); ++k)
    if (gt.fine[k]) valid.push_back(k);
  std::vector<std::size_t> chosen;
  if (valid.size() <= max_windows) {
    chosen = valid;
  } else {
    for (std::size_t k = 0; k < max_windows; ++k) chosen.push_back(valid[k * valid.size() / max_windows]);
  }
  out.positives = chosen.size();

  if (chosen.empty()) {
    out.fine = Tensor::scalar(0);
    out.subpixel = Tensor::scalar(0);
  } else {
    std::vector<std::array<long, 2>> ca, cb;
    for (auto k : chosen) {
      ca.push_back(ms::fine_center(gt.coarse[k].i, feats.cols));
      cb.push_back(ms::fine_center(gt.coarse[k].j, feats.cols));
    }
    const auto wa = ms::crop_windows(feats.a.fine, ca, config.fine_window);
    const auto wb = ms::crop_windows(feats.b.fine, cb, config.fine_window);
    const auto fine = ms::fine_match(wa, wb, weights.fine_mixer, config.temperature);
    out.fine = fine_loss(fine.probability, gt, chosen);

    std::vector<std::array<std::size_t, 3>> cells;
    for (std::size_t m = 0; m < chosen.size(); ++m) cells.push_back({m, gt.fine[chosen[m]]->a, gt.fine[chosen[m]]->b});
    const auto sub = ms::subpixel_refine(fine, wa, wb, cells, weights, config, sample.a.width, sample.a.height);
    out.subpixel = epipolar_loss_pixels(sub.coords, sample.k, sample.e).loss;
  }
  out.total = add(add(scale(out.coarse, lw.coarse), scale(out.fine, lw.fine)), scale(out.subpixel, lw.subpixel));
  return out;
}

double coarse_precision(const ms::MatchSet& matches, const Mat3& h) {
  if (matches.coarse.empty()) return 0.0;
  const std::size_t w = matches.coarse_width;
  const double cs = static_cast<double>(ms::kCoarseStride);
  std::size_t correct = 0;
  for (const auto& m : matches.coarse) {
    const auto p = warp_point(h, cs * (m.i % w), cs * (m.i / w));
    if (std::hypot(p.x() - cs * (m.j % w), p.y() - cs * (m.j / w)) < cs) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(matches.coarse.size());
}

double learning_rate(std::size_t step, double base, std::size_t warmup, std::size_t total) {
  if (step < warmup) return base * static_cast<double>(step) / static_cast<double>(warmup);
  const double span = static_cast<double>(std::max<std::size_t>(total > warmup ? total - warmup : 1, 1));
  const double progress = std::min(1.0, static_cast<double>(step - warmup) / span);
  return base * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

std::vector<std::filesystem::path> list_corpus(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> out;
  if (!std::filesystem::is_directory(dir)) throw TrainingError("corpus directory not found: " + dir.string());
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".pgm") out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

Corpus load_corpus(const std::filesystem::path& dir, std::size_t min_images) {
  const auto files = list_corpus(dir);
  if (files.size() < min_images) {
    throw TrainingError("corpus " + dir.string() + " holds " + std::to_string(files.size()) + " images, need " +
                        std::to_string(min_images));
  }
  Corpus c;
  const std::size_t held = std::max<std::size_t>(1, files.size() / 5);
  for (std::size_t i = 0; i < files.size(); ++i) {
    (i + held < files.size() ? c.train : c.held_out).push_back(read_pgm(files[i]));
  }
  return c;
}

namespace {

struct Prepared {
  PairSample sample;
  GroundTruth gt;
};

std::vector<Prepared> prepare(const std::vector<GrayImage>& bases, std::size_t count, std::mt19937& rng,
                              const SynthOptions& synth) {
  std::vector<Prepared> out;
  const std::size_t cells = synth.size / ms::kCoarseStride;
  for (std::size_t k = 0; k < count; ++k) {
    PairSample s = synth_pair(bases[k % bases.size()], rng, synth);
    GroundTruth gt = gt_from_warp(s.h, cells, cells);
    out.push_back({std::move(s), std::move(gt)});
  }
  return out;
}

struct Means {
  double c = 0, f = 0, s = 0, total = 0;
};

Means evaluate(const std::vector<Prepared>& pairs, const ms::MatcherWeights& w, const TrainConfig& cfg) {
  NoGradGuard no_grad;
  Means m;
  for (const auto& p : pairs) {
    const auto terms = pair_loss(p.sample, p.gt, w, cfg.matcher, cfg.loss_weights, cfg.max_windows);
    m.c += terms.coarse.item();
    m.f += terms.fine.item();
    m.s += terms.subpixel.item();
    m.total += terms.total.item();
  }
  const double n = static_cast<double>(std::max<std::size_t>(pairs.size(), 1));
  return {m.c / n, m.f / n, m.s / n, m.total / n};
}

double precision(const std::vector<Prepared>& pairs, const ms::MatcherWeights& w, const TrainConfig& cfg) {
  double sum = 0;
  for (const auto& p : pairs) sum += coarse_precision(ms::match_pair(p.sample.a, p.sample.b, w, cfg.matcher), p.sample.h);
  return pairs.empty() ? 0.0 : sum / static_cast<double>(pairs.size());
}

}  // namespace

TrainResult train(const Corpus& corpus, const TrainConfig& cfg, std::ostream* progress) {
  if (corpus.train.empty() || corpus.held_out.empty()) throw TrainingError("corpus needs training and held-out images");
  if (cfg.train_pairs == 0 || cfg.batch_size == 0) throw TrainingError("train_pairs and batch_size must be positive");
  cfg.matcher.validate();

  std::mt19937 rng(cfg.seed);
  const auto train_set = prepare(corpus.train, cfg.train_pairs, rng, cfg.synth);
  const auto val_set = prepare(corpus.held_out, cfg.val_pairs, rng, cfg.synth);

  TrainResult result;
  result.weights = ms::MatcherWeights::init(cfg.matcher, cfg.seed);
  const auto params = result.weights.parameters();
  std::vector<std::vector<double>> velocity;
  for (const auto& p : params) velocity.emplace_back(p.size(), 0.0);

  const Means start = evaluate(train_set, result.weights, cfg);
  result.initial_loss = start.total;
  result.log.push_back({0, start.c, start.f, start.s, precision(val_set, result.weights, cfg)});
  if (progress) *progress << "epoch 0 loss " << start.total << " precision " << result.log.back().precision << '\n';

  const std::size_t batch = std::min(cfg.batch_size, cfg.train_pairs);
  const std::size_t warmup = (cfg.train_pairs * cfg.warmup_epochs + batch - 1) / batch;
  std::vector<std::size_t> order(cfg.train_pairs);
  std::size_t cursor = cfg.train_pairs;  // forces a shuffle on the first draw
  Means running;
  std::size_t in_epoch = 0;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    bool epoch_done = false;
    Tensor loss;
    for (std::size_t b = 0; b < batch; ++b) {
      if (cursor == cfg.train_pairs) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const auto& pair = train_set[order[cursor++]];
      LossTerms terms;
      try {
        terms = pair_loss(pair.sample, pair.gt, result.weights, cfg.matcher, cfg.loss_weights, cfg.max_windows);
      } catch (const TensorError& e) {
        throw TrainingError("non-finite value at step " + std::to_string(step) + ": " + e.what());
      }
      if (!std::isfinite(terms.total.item())) throw TrainingError("loss is not finite at step " + std::to_string(step));
      running.c += terms.coarse.item();
      running.f += terms.fine.item();
      running.s += terms.subpixel.item();
      ++in_epoch;
      const Tensor part = scale(terms.total, Scalar(1) / static_cast<Scalar>(batch));
      loss = b == 0 ? part : add(loss, part);
      if (cursor == cfg.train_pairs) epoch_done = true;
    }

    const auto grads = backward(loss, params);
    double norm2 = 0;
    for (const auto& p : params)
      for (auto g : grads[p].values()) norm2 += static_cast<double>(g) * g;
    const double norm = std::sqrt(norm2);
    const double clip = cfg.grad_clip > 0 && norm > cfg.grad_clip ? cfg.grad_clip / norm : 1.0;

    const double lr = learning_rate(step, cfg.learning_rate, warmup, cfg.steps);
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto g = grads[params[k]].values();
      auto v = params[k].values();
      std::vector<Scalar> next(v.begin(), v.end());
      for (std::size_t i = 0; i < next.size(); ++i) {
        velocity[k][i] = cfg.momentum * velocity[k][i] + clip * g[i];
        next[i] = static_cast<Scalar>(next[i] - lr * velocity[k][i]);
      }
      Tensor param = params[k];
      param.assign(next);
    }

    if (epoch_done || step + 1 == cfg.steps) {
      const double n = static_cast<double>(in_epoch);
      EpochLog row{result.log.size(), running.c / n, running.f / n, running.s / n, precision(val_set, result.weights, cfg)};
      result.log.push_back(row);
      if (progress) {
        *progress << "epoch " << row.epoch << " loss " << (row.loss_c + row.loss_f + row.loss_s) << " precision "
                  << row.precision << '\n';
      }
      running = {};
      in_epoch = 0;
    }
  }

  result.final_loss = evaluate(train_set, result.weights, cfg).total;
  result.final_precision = result.log.back().precision;
  return result;
}

void write_metrics(std::ostream& os, const std::vector<EpochLog>& log) {
  os << "epoch,loss_c,loss_f,loss_s,precision\n";
  os << std::setprecision(6) << std::fixed;
  for (const auto& r : log) os << r.epoch << ',' << r.loss_c << ',' << r.loss_f << ',' << r.loss_s << ',' << r.precision << '\n';
}

}  // namespace jmatch::supervision
