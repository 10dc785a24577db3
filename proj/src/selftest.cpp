#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "jmatch/cli.hpp"
#include "jmatch/gradcheck.hpp"
#include "jmatch/ssm.hpp"

namespace jmatch::cli {

namespace {

Tensor random_tensor(Shape shape, std::mt19937& rng, double lo = -1, double hi = 1, bool param = false) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<Scalar> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<Scalar>(u(rng));
  return param ? Tensor::parameter(std::move(shape), std::move(v)) : Tensor::from_values(std::move(shape), std::move(v));
}

std::vector<jego::ScanLayout> even_layouts(const SelftestOptions& options) {
  std::vector<jego::ScanLayout> out;
  for (std::size_t h = 2; h <= 8; h += 2)
    for (std::size_t w = 2; w <= 8; w += 2) {
      auto layout = jego::build_layout(h, w);
      if (options.layout_hook) options.layout_hook(layout);
      out.push_back(std::move(layout));
    }
  return out;
}

SuiteResult partition_suite(const SelftestOptions& options) {
  for (const auto& layout : even_layouts(options)) {
    std::vector<int> hits(layout.token_count(), 0);
    for (const auto& dir : layout.directions)
      for (const auto& c : dir.order) ++hits[layout.pair_index(layout.to_pair(dir.grid, c))];
    if (std::any_of(hits.begin(), hits.end(), [](int h) { return h != 1; })) {
      return {"partition", false, "grid " + std::to_string(layout.height) + "x" + std::to_string(layout.width)};
    }
  }
  return {"partition", true, "even grids up to 8x8"};
}

SuiteResult round_trip_suite(const SelftestOptions& options) {
  std::mt19937 rng(7);
  for (const auto& layout : even_layouts(options)) {
    const Tensor a = random_tensor({layout.height, layout.width, 3}, rng);
    const Tensor b = random_tensor({layout.height, layout.width, 3}, rng);
    const auto [xh, xv] = jego::joint_concat(a, b);
    const auto [ra, rb] = jego::jego_merge(jego::jego_scan(xh, xv, layout), layout);
    auto same = [](const Tensor& x, const Tensor& y) {
      return std::equal(x.values().begin(), x.values().end(), y.values().begin(), y.values().end());
    };
    if (!same(ra, a) || !same(rb, b)) {
      return {"round-trip", false, "grid " + std::to_string(layout.height) + "x" + std::to_string(layout.width)};
    }
  }
  return {"round-trip", true, "bit-exact"};
}

SuiteResult mode_suite() {
  double worst = 0;
  for (std::uint32_t seed = 0; seed < 5; ++seed) {
    std::mt19937 rng(seed);
    const std::size_t n = 32, ce = 4, cs = 3;
    std::vector<Scalar> ap(ce * cs);
    for (std::size_t e = 0; e < ce; ++e)
      for (std::size_t s = 0; s < cs; ++s) ap[e * cs + s] = -static_cast<Scalar>(s + 1);
    const Tensor a_prime = Tensor::from_values({ce, cs}, ap);
    const Tensor delta_row = softplus(random_tensor({1, ce}, rng));
    const Tensor b_row = random_tensor({1, cs}, rng), c_row = random_tensor({1, cs}, rng);
    auto tile = [n](const Tensor& row) {
      std::vector<Tensor> parts(n, row);
      return concat(parts, 0);
    };
    const auto [a, b] = ssm::discretize(a_prime, tile(b_row), tile(delta_row));
    const Tensor x = random_tensor({n, ce}, rng);
    const Tensor c = tile(c_row);
    const Tensor y1 = ssm::selective_scan(a, b, c, x), y2 = ssm::global_conv_scan(a, b, c, x);
    for (std::size_t i = 0; i < y1.size(); ++i)
      worst = std::max(worst, std::abs(static_cast<double>(y1.values()[i]) - y2.values()[i]));
  }
  std::ostringstream os;
  os << "max abs " << worst;
  return {"mode-equivalence", worst < 1e-5, os.str()};
}

SuiteResult causality_suite() {
  std::mt19937 rng(3);
  const ssm::SsmDims dims{4, 8, 3, 4};
  const auto params = ssm::SsmBlockParams::init(dims, rng);
  const std::size_t n = 8;
  const Tensor seq = random_tensor({n, dims.model}, rng);
  const Tensor base = ssm::mamba_block(seq, params);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<Scalar> v(seq.values().begin(), seq.values().end());
    for (std::size_t c = 0; c < dims.model; ++c) v[i * dims.model + c] += Scalar(0.5);
    const Tensor out = ssm::mamba_block(Tensor::from_values(seq.shape(), v), params);
    for (std::size_t k = 0; k < i * dims.model; ++k) {
      if (out.values()[k] != base.values()[k]) return {"causality", false, "position " + std::to_string(i)};
    }
  }
  return {"causality", true, "N = 8 exhaustive"};
}

SuiteResult gradient_suite() {
  // Float smoke check; the tight tolerance lives in the double-precision tests.
  std::mt19937 rng(11);
  const double tol = 2e-2;
  double worst = 0;
  auto check = [&](const std::function<Tensor(const std::vector<Tensor>&)>& f, std::vector<Tensor> in) {
    worst = std::max(worst, check_gradients(f, in, 1e-2).max_relative_error);
  };
  check([](const auto& t) { return sum(square(matmul(t[0], t[1]))); },
        {random_tensor({3, 4}, rng, -1, 1, true), random_tensor({4, 2}, rng, -1, 1, true)});
  check([](const auto& t) { return sum(mul(softmax(t[0], 1), t[1])); },
        {random_tensor({3, 5}, rng, -1, 1, true), random_tensor({3, 5}, rng, -1, 1, true)});
  check([](const auto& t) { return sum(square(layer_norm(t[0], t[1], t[2]))); },
        {random_tensor({2, 6}, rng, -1, 1, true), random_tensor({6}, rng, 0.5, 1.5, true),
         random_tensor({6}, rng, -1, 1, true)});
  check([](const auto& t) { return mean(gelu(conv2d(t[0], t[1]))); },
        {random_tensor({4, 4, 2}, rng, -1, 1, true), random_tensor({3, 3, 2, 2}, rng, -1, 1, true)});
  std::ostringstream os;
  os << "max rel " << worst;
  return {"gradients", worst < tol, os.str()};
}

}  // namespace

void corrupt_merge_layout(jego::ScanLayout& layout) {
  auto& first = layout.directions[0];
  auto& second = layout.directions[1];
  if (first.order.empty() || second.order.empty() || first.grid != second.grid) return;
  second.order[0] = first.order[0];
  second.flat[0] = first.flat[0];
}

std::vector<SuiteResult> run_selftest(const SelftestOptions& options) {
  return {round_trip_suite(options), partition_suite(options), mode_suite(), causality_suite(), gradient_suite()};
}

}  // namespace jmatch::cli
