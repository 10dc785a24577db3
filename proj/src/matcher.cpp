#include "jmatch/matcher.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>

namespace jmatch::matcher {

void MatcherConfig::validate() const {
  if (!(temperature > 0)) throw TensorError("temperature must be positive");
  if (!(coarse_threshold > 0 && coarse_threshold < 1)) throw TensorError("coarse threshold must lie in (0, 1)");
  if (fine_window % 2 == 0) throw TensorError("fine window must be odd");
  if (fine_channels < 2 || coarse_channels == 0 || layers == 0 || token_hidden == 0) {
    throw TensorError("matcher channel sizes must be positive");
  }
  ssm_dims().validate();
}

EncoderParams EncoderParams::init(const MatcherConfig& config, std::mt19937& rng) {
  const std::size_t half = config.fine_channels / 2;
  const std::array<std::array<std::size_t, 2>, 4> io{{{1, half},
                                                       {half, config.fine_channels},
                                                       {config.fine_channels, config.coarse_channels},
                                                       {config.coarse_channels, config.coarse_channels}}};
  EncoderParams p;
  for (std::size_t i = 0; i < 4; ++i) {
    const auto [cin, cout] = io[i];
    p.kernels[i] = uniform_parameter({3, 3, cin, cout}, 9 * cin, rng, std::sqrt(6.0));
    p.biases[i] = Tensor::parameter({cout}, std::vector<Scalar>(cout, Scalar(0)));
  }
  return p;
}

void EncoderParams::collect(const std::string& prefix, NamedTensors& out) const {
  for (std::size_t i = 0; i < 4; ++i) {
    out.emplace_back(prefix + "conv" + std::to_string(i) + ".kernel", kernels[i]);
    out.emplace_back(prefix + "conv" + std::to_string(i) + ".bias", biases[i]);
  }
}

PyramidFeatures encode(const GrayImage& image, const EncoderParams& p) {
  if (image.empty()) throw TensorError("encode: empty image");
  const std::size_t h = (image.height + kCoarseStride - 1) / kCoarseStride * kCoarseStride;
  const std::size_t w = (image.width + kCoarseStride - 1) / kCoarseStride * kCoarseStride;
  // Centred on the image's own mean: a uniform image encodes to zero, so it
  // cannot pick up position from the padding or the causal scans.
  double mean = 0;
  for (std::size_t y = 0; y < image.height; ++y)
    for (std::size_t x = 0; x < image.width; ++x) mean += image.at(x, y);
  mean /= static_cast<double>(image.width * image.height);
  std::vector<Scalar> px(h * w, Scalar(0));
  for (std::size_t y = 0; y < image.height; ++y)
    for (std::size_t x = 0; x < image.width; ++x) px[y * w + x] = static_cast<Scalar>((image.at(x, y) - mean) / 64.0);
  const Tensor input = Tensor::from_values({h, w, 1}, std::move(px));

  const Tensor f0 = gelu(conv2d(input, p.kernels[0], p.biases[0], 2));
  const Tensor fine = conv2d(f0, p.kernels[1], p.biases[1], 1);
  const Tensor c0 = gelu(conv2d(gelu(fine), p.kernels[2], p.biases[2], 2));
  const Tensor coarse = conv2d(c0, p.kernels[3], p.biases[3], 2);
  return {coarse, fine, image.width, image.height};
}

MixerParams MixerParams::init(std::size_t tokens, std::size_t channels, std::size_t token_hidden,
                              std::size_t channel_hidden, std::mt19937& rng) {
  MixerParams p;
  p.tokens = tokens;
  p.channels = channels;
  auto zeros = [](std::size_t n) { return Tensor::parameter({n}, std::vector<Scalar>(n, Scalar(0))); };
  p.token_w1 = uniform_parameter({tokens, token_hidden}, tokens, rng);
  p.token_b1 = zeros(token_hidden);
  p.token_w2 = uniform_parameter({token_hidden, tokens}, token_hidden, rng);
  p.token_b2 = zeros(tokens);
  p.channel_w1 = uniform_parameter({channels, channel_hidden}, channels, rng);
  p.channel_b1 = zeros(channel_hidden);
  p.channel_w2 = uniform_parameter({channel_hidden, channels}, channel_hidden, rng);
  p.channel_b2 = zeros(channels);
  return p;
}

void MixerParams::collect(const std::string& prefix, NamedTensors& out) const {
  out.emplace_back(prefix + "token_w1", token_w1);
  out.emplace_back(prefix + "token_b1", token_b1);
  out.emplace_back(prefix + "token_w2", token_w2);
  out.emplace_back(prefix + "token_b2", token_b2);
  out.emplace_back(prefix + "channel_w1", channel_w1);
  out.emplace_back(prefix + "channel_b1", channel_b1);
  out.emplace_back(prefix + "channel_w2", channel_w2);
  out.emplace_back(prefix + "channel_b2", channel_b2);
}

Tensor mixer(const Tensor& tokens, const MixerParams& p) {
  if (tokens.rank() != 3 || tokens.dim(1) != p.tokens || tokens.dim(2) != p.channels) {
    throw TensorError("mixer: expected M x " + std::to_string(p.tokens) + " x " + std::to_string(p.channels) +
                      ", got " + shape_string(tokens.shape()));
  }
  const Tensor across = transpose_last2(tokens);  // M x C x T
  const Tensor spatial = linear(gelu(linear(across, p.token_w1, p.token_b1)), p.token_w2, p.token_b2);
  const Tensor mid = add(tokens, transpose_last2(spatial));
  return add(mid, linear(gelu(linear(mid, p.channel_w1, p.channel_b1)), p.channel_w2, p.channel_b2));
}

MatcherWeights MatcherWeights::init(const MatcherConfig& config, std::uint32_t seed) {
  config.validate();
  std::mt19937 rng(seed);
  MatcherWeights w;
  w.encoder = EncoderParams::init(config, rng);
  for (std::size_t i = 0; i < config.layers; ++i) w.layers.push_back(jego::JointMambaParams::init(config.ssm_dims(), rng));
  const std::size_t c2 = config.fine_channels;
  w.fine_mixer = MixerParams::init(2 * config.window_cells(), c2, config.token_hidden, 2 * c2, rng);
  w.refine_mixer = MixerParams::init(1, 2 * c2, config.token_hidden, 2 * c2, rng);
  w.refine_weight = uniform_parameter({2 * c2, 4}, 2 * c2, rng);
  w.refine_bias = Tensor::parameter({4}, std::vector<Scalar>(4, Scalar(0)));
  return w;
}

NamedTensors MatcherWeights::named() const {
  NamedTensors out;
  encoder.collect("encoder.", out);
  for (std::size_t i = 0; i < layers.size(); ++i) layers[i].collect("layer" + std::to_string(i) + ".", out);
  fine_mixer.collect("fine_mixer.", out);
  refine_mixer.collect("refine_mixer.", out);
  out.emplace_back("refine.weight", refine_weight);
  out.emplace_back("refine.bias", refine_bias);
  return out;
}

std::vector<Tensor> MatcherWeights::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named()) out.push_back(t);
  return out;
}

Tensor coarse_similarity(const Tensor& fa, const Tensor& fb, Scalar temperature) {
  if (!(temperature > 0)) throw TensorError("coarse_similarity: temperature must be positive");
  return scale(matmul(fa, transpose_last2(fb)), Scalar(1) / temperature);
}

std::vector<CoarseMatch> select_coarse(const Tensor& p_ab, const Tensor& p_ba, Scalar threshold) {
  if (p_ab.rank() != 2 || p_ab.shape() != p_ba.shape()) throw TensorError("select_coarse: probability shape mismatch");
  const std::size_t na = p_ab.dim(0), nb = p_ab.dim(1);
  auto ab = p_ab.values(), ba = p_ba.values();
  std::vector<Scalar> conf(na * nb, Scalar(-1));
  for (std::size_t i = 0; i < na; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < nb; ++j)
      if (ab[i * nb + j] > ab[i * nb + best]) best = j;
    if (nb > 0 && ab[i * nb + best] >= threshold) conf[i * nb + best] = ab[i * nb + best];
  }
  for (std::size_t j = 0; j < nb; ++j) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < na; ++i)
      if (ba[i * nb + j] > ba[best * nb + j]) best = i;
    if (na > 0 && ba[best * nb + j] >= threshold) {
      conf[best * nb + j] = std::max(conf[best * nb + j], ba[best * nb + j]);
    }
  }
  std::vector<CoarseMatch> out;
  for (std::size_t i = 0; i < na; ++i)
    for (std::size_t j = 0; j < nb; ++j)
      if (conf[i * nb + j] >= 0) out.push_back({i, j, conf[i * nb + j]});
  return out;
}

std::vector<CoarseMatch> coarse_match(const Tensor& similarity, Scalar threshold) {
  if (similarity.rank() != 2) throw TensorError("coarse_match: similarity must be a matrix");
  if (similarity.size() == 0) return {};
  return select_coarse(softmax(similarity, 1), softmax(similarity, 0), threshold);
}

std::array<long, 2> WindowSet::cell(std::size_t m, std::size_t k) const {
  const long half = static_cast<long>(window / 2);
  return {centers[m][0] + static_cast<long>(k / window) - half, centers[m][1] + static_cast<long>(k % window) - half};
}

WindowSet crop_windows(const Tensor& fine, const std::vector<std::array<long, 2>>& centers, std::size_t window) {
  if (fine.rank() != 3) throw TensorError("crop_windows: expected H x W x C features");
  if (window % 2 == 0) throw TensorError("crop_windows: window must be odd");
  const auto h = static_cast<long>(fine.dim(0)), w = static_cast<long>(fine.dim(1));
  const std::size_t c = fine.dim(2), cells = window * window;
  WindowSet out;
  out.window = window;
  out.centers = centers;
  std::vector<std::size_t> rows;
  rows.reserve(centers.size() * cells);
  for (std::size_t m = 0; m < centers.size(); ++m) {
    for (std::size_t k = 0; k < cells; ++k) {
      const auto [r, col] = out.cell(m, k);
      rows.push_back(r >= 0 && r < h && col >= 0 && col < w ? static_cast<std::size_t>(r * w + col) : kZeroRow);
    }
  }
  const Tensor flat = reshape(fine, {fine.dim(0) * fine.dim(1), c});
  out.features = reshape(gather_rows(flat, rows), {centers.size(), cells, c});
  return out;
}

std::array<long, 2> fine_center(std::size_t coarse_index, std::size_t coarse_width) {
  return {static_cast<long>(coarse_index / coarse_width * kFinePerCoarse),
          static_cast<long>(coarse_index % coarse_width * kFinePerCoarse)};
}

Tensor fine_probability(const Tensor& mixed_a, const Tensor& mixed_b, Scalar temperature) {
  const Tensor sim = scale(matmul(mixed_a, transpose_last2(mixed_b)), Scalar(1) / temperature);
  return mul(softmax(sim, 2), softmax(sim, 1));
}

FineResult fine_match(const WindowSet& a, const WindowSet& b, const MixerParams& mixer_params, Scalar temperature) {
  const Tensor& fa = a.features;
  const Tensor& fb = b.features;
  if (fa.rank() != 3 || fa.shape() != fb.shape()) throw TensorError("fine_match: window sets differ in shape");
  const std::size_t m = fa.dim(0), cells = fa.dim(1);
  FineResult out;
  if (m == 0) {
    out.mixed_a = fa;
    out.mixed_b = fb;
    out.probability = Tensor::zeros({0, cells, cells});
    return out;
  }
  const Tensor mixed = mixer(concat({fa, fb}, 1), mixer_params);
  out.mixed_a = narrow(mixed, 1, 0, cells);
  out.mixed_b = narrow(mixed, 1, cells, cells);
  const Scalar norm = Scalar(1) / std::sqrt(static_cast<Scalar>(fa.dim(2)));
  out.probability = fine_probability(scale(out.mixed_a, norm), scale(out.mixed_b, norm), temperature);

  auto p = out.probability.values();
  std::vector<std::size_t> row_best(cells), col_best(cells);
  const long side = std::lround(std::sqrt(static_cast<double>(cells))), mid = side / 2;
  auto centre_distance = [&](std::size_t k) {
    return std::abs(static_cast<long>(k) / side - mid) + std::abs(static_cast<long>(k) % side - mid);
  };
  for (std::size_t w = 0; w < m; ++w) {
    const Scalar* pw = p.data() + w * cells * cells;
    for (std::size_t i = 0; i < cells; ++i) {
      row_best[i] = 0;
      for (std::size_t j = 1; j < cells; ++j)
        if (pw[i * cells + j] > pw[i * cells + row_best[i]]) row_best[i] = j;
    }
    for (std::size_t j = 0; j < cells; ++j) {
      col_best[j] = 0;
      for (std::size_t i = 1; i < cells; ++i)
        if (pw[i * cells + j] > pw[col_best[j] * cells + j]) col_best[j] = i;
    }
    // Ties go to the pair nearest the window centre, i.e. the coarse anchor.
    bool found = false;
    FineMatch best{w, 0, 0, Scalar(-1)};
    for (std::size_t i = 0; i < cells; ++i) {
      const std::size_t j = row_best[i];
      if (col_best[j] != i) continue;
      const Scalar pij = pw[i * cells + j];
      if (pij > best.confidence || (pij == best.confidence && centre_distance(i) < centre_distance(best.a))) {
        best = {w, i, j, pw[i * cells + j]};
        found = true;
      }
    }
    if (found) out.matches.push_back(best);
  }
  return out;
}

SubpixelResult subpixel_refine(const FineResult& fine, const WindowSet& wa, const WindowSet& wb,
                               const std::vector<std::array<std::size_t, 3>>& cells, const MatcherWeights& weights,
                               const MatcherConfig& config, std::size_t width, std::size_t height) {
  SubpixelResult out;
  const std::size_t k = cells.size();
  if (k == 0) {
    out.offsets = Tensor::zeros({0, 4});
    out.coords = Tensor::zeros({0, 4});
    return out;
  }
  const std::size_t window_cells = fine.mixed_a.dim(1), c2 = fine.mixed_a.dim(2);
  std::vector<std::size_t> rows_a, rows_b;
  std::vector<Scalar> base;
  for (const auto& [m, a, b] : cells) {
    rows_a.push_back(m * window_cells + a);
    rows_b.push_back(m * window_cells + b);
    const auto ca = wa.cell(m, a), cb = wb.cell(m, b);
    for (long v : {ca[1], ca[0], cb[1], cb[0]}) base.push_back(static_cast<Scalar>(v * static_cast<long>(kFineStride)));
  }
  const Tensor fa = gather_rows(reshape(fine.mixed_a, {fine.mixed_a.dim(0) * window_cells, c2}), rows_a);
  const Tensor fb = gather_rows(reshape(fine.mixed_b, {fine.mixed_b.dim(0) * window_cells, c2}), rows_b);
  const Tensor joint = reshape(concat({fa, fb}, 1), {k, 1, 2 * c2});
  const Tensor mixed = reshape(mixer(joint, weights.refine_mixer), {k, 2 * c2});
  out.offsets = tanh(linear(mixed, weights.refine_weight, weights.refine_bias));
  const Scalar pixels = config.offset_scale * static_cast<Scalar>(kFineStride);
  out.coords = add(Tensor::from_values({k, 4}, base), scale(out.offsets, pixels));

  auto cv = out.coords.values();
  const Scalar max_x = static_cast<Scalar>(width) - 1, max_y = static_cast<Scalar>(height) - 1;
  for (std::size_t i = 0; i < k; ++i) {
    out.points.push_back({std::clamp(cv[i * 4 + 0], Scalar(0), max_x), std::clamp(cv[i * 4 + 1], Scalar(0), max_y),
                          std::clamp(cv[i * 4 + 2], Scalar(0), max_x), std::clamp(cv[i * 4 + 3], Scalar(0), max_y)});
  }
  return out;
}

CoarseFeatures coarse_features(const GrayImage& a, const GrayImage& b, const MatcherWeights& weights,
                               const MatcherConfig& config) {
  if (a.width != b.width || a.height != b.height) throw TensorError("images of a pair must share a size");
  CoarseFeatures out;
  out.a = encode(a, weights.encoder);
  out.b = encode(b, weights.encoder);
  Tensor ca = out.a.coarse, cb = out.b.coarse;
  for (const auto& layer : weights.layers) {
    auto res = jego::joint_mamba_layer(ca, cb, layer);
    ca = res.a;
    cb = res.b;
    out.tokens += res.tokens;
  }
  out.rows = ca.dim(0);
  out.cols = ca.dim(1);
  const Scalar norm = Scalar(1) / std::sqrt(static_cast<Scalar>(config.coarse_channels));
  out.flat_a = scale(reshape(ca, {out.rows * out.cols, config.coarse_channels}), norm);
  out.flat_b = scale(reshape(cb, {out.rows * out.cols, config.coarse_channels}), norm);
  return out;
}

MatchSet match_pair(const GrayImage& a, const GrayImage& b, const MatcherWeights& weights,
                    const MatcherConfig& config) {
  NoGradGuard no_grad;
  const CoarseFeatures feats = coarse_features(a, b, weights, config);
  MatchSet out;
  out.coarse_width = feats.cols;
  out.coarse = coarse_match(coarse_similarity(feats.flat_a, feats.flat_b, config.temperature), config.coarse_threshold);
  if (out.coarse.empty()) return out;

  std::vector<std::array<long, 2>> centers_a, centers_b;
  for (const auto& m : out.coarse) {
    centers_a.push_back(fine_center(m.i, feats.cols));
    centers_b.push_back(fine_center(m.j, feats.cols));
  }
  const WindowSet wa = crop_windows(feats.a.fine, centers_a, config.fine_window);
  const WindowSet wb = crop_windows(feats.b.fine, centers_b, config.fine_window);
  const FineResult fine = fine_match(wa, wb, weights.fine_mixer, config.temperature);
  out.fine = fine.matches;

  std::vector<std::array<std::size_t, 3>> cells;
  const Scalar max_x = static_cast<Scalar>(a.width) - 1, max_y = static_cast<Scalar>(a.height) - 1;
  for (const auto& f : fine.matches) {
    cells.push_back({f.coarse_index, f.a, f.b});
    const auto ca = wa.cell(f.coarse_index, f.a), cb = wb.cell(f.coarse_index, f.b);
    auto px = [](long v, Scalar hi) { return std::clamp(static_cast<Scalar>(v * static_cast<long>(kFineStride)), Scalar(0), hi); };
    out.fine_points.push_back({px(ca[1], max_x), px(ca[0], max_y), px(cb[1], max_x), px(cb[0], max_y)});
  }
  out.subpixel = subpixel_refine(fine, wa, wb, cells, weights, config, a.width, a.height).points;
  return out;
}

void write_matches(std::ostream& os, const MatchSet& matches) {
  const auto w = static_cast<long>(matches.coarse_width);
  auto coarse_xy = [w](std::size_t idx) {
    return std::array<double, 2>{static_cast<double>(static_cast<long>(idx) % w * static_cast<long>(kCoarseStride)),
                                 static_cast<double>(static_cast<long>(idx) / w * static_cast<long>(kCoarseStride))};
  };
  os << std::setprecision(6) << std::fixed;
  for (const auto& m : matches.coarse) {
    const auto pa = coarse_xy(m.i), pb = coarse_xy(m.j);
    os << pa[0] << ' ' << pa[1] << ' ' << pb[0] << ' ' << pb[1] << ' ' << m.confidence << " coarse\n";
  }
  for (std::size_t k = 0; k < matches.fine.size(); ++k) {
    const auto& p = matches.fine_points[k];
    os << p.xa << ' ' << p.ya << ' ' << p.xb << ' ' << p.yb << ' ' << matches.fine[k].confidence << " fine\n";
  }
  for (std::size_t k = 0; k < matches.subpixel.size(); ++k) {
    const auto& p = matches.subpixel[k];
    os << p.xa << ' ' << p.ya << ' ' << p.xb << ' ' << p.yb << ' ' << matches.fine[k].confidence << " subpixel\n";
  }
}

}  // namespace jmatch::matcher
