#include <doctest.h>

#include <cmath>
#include <sstream>

#include "jmatch/gradcheck.hpp"
#include "jmatch/tensor_io.hpp"
#include "support.hpp"

using namespace jmatch;
using namespace jmatch::testing;

namespace {

std::vector<Scalar> vals(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

// Cross-correlation by direct summation, same accumulation order as the library.
std::vector<Scalar> conv2d_oracle(const Tensor& x, const Tensor& k) {
  const std::size_t h = x.dim(0), w = x.dim(1), ci = x.dim(2), kh = k.dim(0), kw = k.dim(1), co = k.dim(3);
  std::vector<Scalar> out(h * w * co);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c)
      for (std::size_t o = 0; o < co; ++o) {
        Scalar acc = 0;
        for (std::size_t ky = 0; ky < kh; ++ky)
          for (std::size_t kx = 0; kx < kw; ++kx)
            for (std::size_t i = 0; i < ci; ++i) {
              const long y = long(r) + long(ky) - long(kh / 2), xx = long(c) + long(kx) - long(kw / 2);
              if (y < 0 || xx < 0 || y >= long(h) || xx >= long(w)) continue;
              acc += x.values()[(y * w + xx) * ci + i] * k.values()[((ky * kw + kx) * ci + i) * co + o];
            }
        out[(r * w + c) * co + o] = acc;
      }
  return out;
}

}  // namespace

TEST_SUITE("tensor") {
  TEST_CASE("strided slice examples") {
    const std::size_t s1[] = {1}, p1[] = {2};
    CHECK(vals(strided_slice(Tensor::from_values({6}, {0, 1, 2, 3, 4, 5}), s1, p1)) == std::vector<Scalar>{1, 3, 5});

    std::vector<Scalar> eye(16, 0);
    for (int i = 0; i < 4; ++i) eye[i * 5] = 1;
    const std::size_t s2[] = {0, 0}, p2[] = {2, 2};
    const Tensor e2 = strided_slice(Tensor::from_values({4, 4}, eye), s2, p2);
    CHECK(e2.shape() == Shape{2, 2});
    CHECK(vals(e2) == std::vector<Scalar>{1, 0, 0, 1});

    const std::size_t s3[] = {0, 1};
    const Tensor r = strided_slice(Tensor::from_values({2, 4}, {0, 1, 2, 3, 4, 5, 6, 7}), s3, p2);
    CHECK(r.shape() == Shape{1, 2});
    CHECK(vals(r) == std::vector<Scalar>{1, 3});
  }

  TEST_CASE("strided slice rejects offsets outside the step") {
    const Tensor t = Tensor::zeros({4});
    const std::size_t s[] = {2}, p[] = {2};
    CHECK_THROWS_AS(strided_slice(t, s, p), TensorError);
    const std::size_t s2[] = {0}, p2[] = {5};
    CHECK_THROWS_AS(strided_slice(t, s2, p2), TensorError);
  }

  TEST_CASE("slice and scatter partition reconstructs exactly") {
    std::mt19937 rng(1);
    const Tensor x = random_tensor({6, 4, 2}, rng);
    Tensor acc = Tensor::zeros(x.shape());
    for (std::size_t m = 0; m < 2; ++m)
      for (std::size_t n = 0; n < 2; ++n) {
        const std::size_t start[] = {m, n, 0}, step[] = {2, 2, 1};
        acc = add(acc, strided_scatter(strided_slice(x, start, step), x.shape(), start, step));
      }
    CHECK(bit_equal(acc, x));
  }

  TEST_CASE("conv2d examples") {
    const Tensor ones = Tensor::full({3, 3, 1}, 1);
    const Tensor two = Tensor::full({1, 1, 1, 1}, 2);
    CHECK(vals(conv2d(ones, two)) == std::vector<Scalar>(9, 2));

    std::vector<Scalar> delta(25, 0);
    delta[12] = 1;
    const Tensor k = Tensor::from_values({3, 3, 1, 1}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    const auto out = vals(conv2d(Tensor::from_values({5, 5, 1}, delta), k));
    // Cross-correlation of an impulse reproduces the kernel flipped about its centre.
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) CHECK(out[(2 + dy) * 5 + 2 + dx] == k.values()[(1 - dy) * 3 + (1 - dx)]);

    CHECK_THROWS_AS(conv2d(Tensor::zeros({3, 3, 2}), Tensor::zeros({3, 3, 1, 1})), TensorError);
  }

  TEST_CASE("conv2d equals the loop definition bit for bit") {
    std::mt19937 rng(2);
    for (std::size_t trial = 0; trial < 5; ++trial) {
      const Tensor x = random_tensor({4 + trial % 3, 4 + trial, 1 + trial % 2}, rng);
      const Tensor k = random_tensor({3, 3, x.dim(2), 2}, rng);
      CHECK(vals(conv2d(x, k)) == conv2d_oracle(x, k));
    }
    const Tensor x = random_tensor({4, 4, 1}, rng), k = random_tensor({3, 3, 1, 1}, rng);
    CHECK(vals(conv2d(x, k)) == conv2d_oracle(x, k));
  }

  TEST_CASE("conv1d depthwise examples") {
    const Tensor x = Tensor::from_values({3, 1}, {1, 0, 0});
    CHECK(vals(conv1d_depthwise(x, Tensor::from_values({1, 1}, {1}), Padding::Causal)) == vals(x));
    CHECK(vals(conv1d_depthwise(x, Tensor::from_values({3, 1}, {1, 1, 1}), Padding::Same)) ==
          std::vector<Scalar>{1, 1, 0});
    const auto c = vals(conv1d_depthwise(Tensor::full({6, 1}, 2), Tensor::from_values({3, 1}, {1, 2, 3}), Padding::Same));
    for (std::size_t i = 1; i + 1 < c.size(); ++i) CHECK(c[i] == 12);
  }

  TEST_CASE("linear examples") {
    std::mt19937 rng(3);
    const Tensor x = random_tensor({2, 3}, rng);
    const Tensor eye = Tensor::from_values({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    CHECK(vals(linear(x, eye, Tensor::zeros({3}))) == vals(x));
    CHECK(linear(Tensor::from_values({2}, {1, 2}), Tensor::from_values({2, 1}, {1, 1})).values()[0] == 3);

    const Tensor a = random_tensor({3, 4}, rng), w = random_tensor({4, 2}, rng);
    const auto out = vals(linear(a, w));
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 2; ++j) {
        Scalar acc = 0;
        for (std::size_t k = 0; k < 4; ++k) acc += a.values()[i * 4 + k] * w.values()[k * 2 + j];
        CHECK(out[i * 2 + j] == doctest::Approx(acc).epsilon(1e-6));
      }
    CHECK_THROWS_AS(linear(a, random_tensor({3, 2}, rng)), TensorError);
  }

  TEST_CASE("softmax examples") {
    auto s = vals(softmax(Tensor::from_values({2}, {0, 0}), 0));
    CHECK(s[0] == doctest::Approx(0.5));
    s = vals(softmax(Tensor::from_values({2}, {Scalar(std::log(2.0)), 0}), 0));
    CHECK(s[0] == doctest::Approx(2.0 / 3));
    CHECK(s[1] == doctest::Approx(1.0 / 3));

    std::mt19937 rng(4);
    const Tensor x = random_tensor({4, 5}, rng, -3, 3);
    const auto base = vals(softmax(x, 1));
    const auto shifted = vals(softmax(add_scalar(x, 7), 1));
    for (std::size_t i = 0; i < base.size(); ++i) CHECK(shifted[i] == doctest::Approx(base[i]).epsilon(1e-6));
    for (std::size_t r = 0; r < 4; ++r) {
      double total = 0;
      for (std::size_t c = 0; c < 5; ++c) total += base[r * 5 + c];
      CHECK(std::abs(total - 1) < 1e-6);
    }
  }

  TEST_CASE("activation examples") {
    const Tensor z = Tensor::from_values({1}, {0});
    CHECK(silu(z).values()[0] == 0);
    CHECK(tanh(z).values()[0] == 0);
    CHECK(softplus(z).values()[0] == doctest::Approx(std::log(2.0)));
    CHECK(std::abs(softplus(Tensor::from_values({1}, {30})).values()[0] - 30) < 1e-6);
    CHECK(softplus(Tensor::from_values({1}, {200})).values()[0] == 200);

    std::vector<Scalar> grid;
    for (int i = -40; i <= 40; ++i) grid.push_back(Scalar(i) / 8);
    const auto g = vals(gelu(Tensor::from_values({grid.size()}, grid)));
    // GELU dips below zero only left of about -0.75; monotone to the right of its minimum.
    for (std::size_t i = 1; i < g.size(); ++i)
      if (grid[i - 1] >= Scalar(-0.75)) CHECK(g[i] >= g[i - 1]);
  }

  TEST_CASE("non-finite values are an error state") {
    CHECK_THROWS_AS(log(Tensor::from_values({1}, {0})), TensorError);
    CHECK_THROWS_AS(Tensor::from_values({1}, {std::numeric_limits<Scalar>::quiet_NaN()}), TensorError);
    CHECK_THROWS_AS(Tensor::from_values({3}, {1, 2}), TensorError);
  }

  TEST_CASE("backward closed forms") {
    const Tensor x = Tensor::parameter({2}, {1, 2});
    const Tensor params[] = {x};
    auto g = backward(sum(x), params);
    CHECK(vals(g[x]) == std::vector<Scalar>{1, 1});
    g = backward(sum(square(x)), params);
    CHECK(vals(g[x]) == std::vector<Scalar>{2, 4});
    CHECK_THROWS_AS(backward(square(x), params), TensorError);
  }

  TEST_CASE("no-grad guard skips recording") {
    const Tensor x = Tensor::parameter({2}, {1, 2});
    Tensor y;
    {
      NoGradGuard guard;
      CHECK_FALSE(grad_enabled());
      y = square(x);
    }
    CHECK(grad_enabled());
    CHECK_FALSE(y.requires_grad());
  }

  TEST_CASE("float build gradients agree with finite differences loosely") {
    std::mt19937 rng(6);
    const auto r = check_gradients([](const auto& t) { return sum(square(matmul(t[0], t[1]))); },
                                   {random_param({3, 4}, rng), random_param({4, 2}, rng)}, 1e-2);
    CHECK(r.max_relative_error < 1e-2);
  }

  TEST_CASE("binary tensor format") {
    const Tensor t = Tensor::from_values({2, 3}, {1, -2, 3.5f, 0, 5, 6});
    std::stringstream ss;
    write_tensor(ss, t);
    const std::string bytes = ss.str();
    CHECK(bytes.substr(0, 4) == "JMT1");
    CHECK(bytes.size() == 4 + 4 + 2 * 4 + 6 * 4);
    CHECK(static_cast<unsigned char>(bytes[4]) == 2);
    const Tensor back = read_tensor(ss);
    CHECK(bit_equal(back, t));

    std::stringstream bad("JMT2");
    CHECK_THROWS(read_tensor(bad));
  }

  TEST_CASE("checkpoint round trip and shape mismatch") {
    ScratchDir dir("ckpt");
    std::mt19937 rng(7);
    const NamedTensors saved = {{"a", random_param({2, 2}, rng)}, {"b", random_param({3}, rng)}};
    save_checkpoint(dir.path(), saved);
    CHECK(std::filesystem::exists(dir / "manifest.txt"));
    const NamedTensors loaded = {{"a", Tensor::parameter({2, 2}, std::vector<Scalar>(4, 0))},
                                 {"b", Tensor::parameter({3}, std::vector<Scalar>(3, 0))}};
    load_checkpoint(dir.path(), loaded);
    CHECK(bit_equal(loaded[0].second, saved[0].second));
    CHECK(bit_equal(loaded[1].second, saved[1].second));
    const NamedTensors wrong = {{"a", Tensor::parameter({4}, std::vector<Scalar>(4, 0))}};
    CHECK_THROWS(load_checkpoint(dir.path(), wrong));
  }
}
