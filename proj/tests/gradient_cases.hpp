#pragma once

// Finite-difference cases shared by the double-precision gradient suite and
// the acceptance helper. Every case reduces its op output to a scalar through
// a fixed random projection so that no gradient entry is trivially symmetric.

#include <functional>
#include <string>
#include <vector>

#include "jmatch/gradcheck.hpp"
#include "jmatch/jego.hpp"
#include "jmatch/matcher.hpp"
#include "jmatch/ssm.hpp"
#include "jmatch/supervision.hpp"
#include "support.hpp"

namespace jmatch::testing {

using OpFn = std::function<Tensor(const std::vector<Tensor>&)>;

struct GradInstance {
  std::vector<Tensor> inputs;
  OpFn f;
};

struct GradCase {
  std::string name;
  std::function<GradInstance(std::mt19937&)> make;
};

inline GradInstance projected(std::vector<Tensor> inputs, OpFn op, std::mt19937& rng) {
  Tensor shape_probe;
  {
    NoGradGuard no_grad;
    shape_probe = op(inputs);
  }
  const Tensor w = random_tensor(shape_probe.shape(), rng);
  return {std::move(inputs), [op, w](const std::vector<Tensor>& t) { return sum(mul(op(t), w)); }};
}

/// Values of magnitude in [0.1, 1] with random sign, clear of kinks at zero.
inline Tensor signed_param(Shape shape, std::mt19937& rng) {
  std::uniform_real_distribution<double> mag(0.1, 1.0);
  std::bernoulli_distribution sign(0.5);
  std::vector<Scalar> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<Scalar>(sign(rng) ? mag(rng) : -mag(rng));
  return Tensor::parameter(std::move(shape), std::move(v));
}

inline std::vector<Tensor> tensors_of(const NamedTensors& named) {
  std::vector<Tensor> out;
  for (const auto& [name, t] : named) out.push_back(t);
  return out;
}

inline std::vector<std::size_t> sizes(std::initializer_list<std::size_t> v) { return v; }

inline std::vector<GradCase> elementwise_cases() {
  using T = const std::vector<Tensor>&;
  auto unary = [](std::string name, Tensor (*op)(const Tensor&), double lo, double hi) {
    return GradCase{name, [op, lo, hi](std::mt19937& rng) {
                      return projected({random_param({3, 4}, rng, lo, hi)}, [op](T t) { return op(t[0]); }, rng);
                    }};
  };
  auto binary = [](std::string name, Tensor (*op)(const Tensor&, const Tensor&)) {
    return GradCase{name, [op](std::mt19937& rng) {
                      return projected({random_param({3, 4}, rng), random_param({3, 4}, rng)},
                                       [op](T t) { return op(t[0], t[1]); }, rng);
                    }};
  };
  return {
      binary("add", add),
      binary("sub", sub),
      binary("mul", mul),
      {"scale", [](std::mt19937& rng) { return projected({random_param({5}, rng)}, [](T t) { return scale(t[0], Scalar(-1.5)); }, rng); }},
      {"add_scalar", [](std::mt19937& rng) { return projected({random_param({5}, rng)}, [](T t) { return add_scalar(t[0], Scalar(0.7)); }, rng); }},
      unary("silu", silu, -3, 3),
      unary("gelu", gelu, -3, 3),
      unary("tanh", tanh, -2, 2),
      unary("softplus", softplus, -4, 4),
      unary("sigmoid", sigmoid, -4, 4),
      unary("exp", exp, -2, 2),
      unary("log", log, 0.5, 2),
      unary("square", square, -2, 2),
      unary("reciprocal", reciprocal, 0.5, 2),
      {"pow", [](std::mt19937& rng) { return projected({random_param({3, 4}, rng, 0.5, 2)}, [](T t) { return pow(t[0], Scalar(2.5)); }, rng); }},
      {"clamp_min", [](std::mt19937& rng) { return projected({signed_param({3, 4}, rng)}, [](T t) { return clamp_min(t[0], Scalar(0)); }, rng); }},
  };
}

inline std::vector<GradCase> structural_cases() {
  using T = const std::vector<Tensor>&;
  return {
      {"sum", [](std::mt19937& rng) { return projected({random_param({2, 3}, rng)}, [](T t) { return sum(t[0]); }, rng); }},
      {"mean", [](std::mt19937& rng) { return projected({random_param({2, 3}, rng)}, [](T t) { return mean(t[0]); }, rng); }},
      {"sum_last", [](std::mt19937& rng) { return projected({random_param({2, 3, 4}, rng)}, [](T t) { return sum_last(t[0]); }, rng); }},
      {"reshape", [](std::mt19937& rng) { return projected({random_param({2, 6}, rng)}, [](T t) { return reshape(t[0], {3, 4}); }, rng); }},
      {"transpose_last2", [](std::mt19937& rng) { return projected({random_param({2, 3, 4}, rng)}, [](T t) { return transpose_last2(t[0]); }, rng); }},
      {"narrow", [](std::mt19937& rng) { return projected({random_param({4, 5}, rng)}, [](T t) { return narrow(t[0], 1, 1, 3); }, rng); }},
      {"concat", [](std::mt19937& rng) {
         return projected({random_param({2, 3}, rng), random_param({2, 2}, rng)}, [](T t) { return concat({t[0], t[1]}, 1); }, rng);
       }},
      {"strided_slice", [](std::mt19937& rng) {
         return projected({random_param({5, 6}, rng)}, [](T t) {
           const std::size_t start[] = {1, 0}, step[] = {2, 3};
           return strided_slice(t[0], start, step);
         }, rng);
       }},
      {"strided_scatter", [](std::mt19937& rng) {
         return projected({random_param({2, 2}, rng)}, [](T t) {
           const std::size_t start[] = {1, 0}, step[] = {2, 3};
           return strided_scatter(t[0], {5, 6}, start, step);
         }, rng);
       }},
      {"gather_rows", [](std::mt19937& rng) {
         return projected({random_param({4, 3}, rng)}, [](T t) {
           const std::size_t rows[] = {2, 0, kZeroRow, 2, 3};
           return gather_rows(t[0], rows);
         }, rng);
       }},
      {"scatter_rows", [](std::mt19937& rng) {
         return projected({random_param({4, 3}, rng)}, [](T t) {
           const std::size_t rows[] = {1, kZeroRow, 1, 4};
           return scatter_rows(t[0], rows, 5);
         }, rng);
       }},
      {"gather_flat", [](std::mt19937& rng) {
         return projected({random_param({3, 4}, rng)}, [](T t) {
           const std::size_t idx[] = {11, 0, 5, 5};
           return gather_flat(t[0], idx);
         }, rng);
       }},
  };
}

inline std::vector<GradCase> linear_algebra_cases() {
  using T = const std::vector<Tensor>&;
  return {
      {"matmul", [](std::mt19937& rng) {
         return projected({random_param({3, 4}, rng), random_param({4, 2}, rng)}, [](T t) { return matmul(t[0], t[1]); }, rng);
       }},
      {"matmul_batched", [](std::mt19937& rng) {
         return projected({random_param({2, 3, 4}, rng), random_param({2, 4, 2}, rng)}, [](T t) { return matmul(t[0], t[1]); }, rng);
       }},
      {"matmul_shared", [](std::mt19937& rng) {
         return projected({random_param({2, 3, 4}, rng), random_param({4, 2}, rng)}, [](T t) { return matmul(t[0], t[1]); }, rng);
       }},
      {"linear", [](std::mt19937& rng) {
         return projected({random_param({2, 3, 4}, rng), random_param({4, 2}, rng), random_param({2}, rng)},
                          [](T t) { return linear(t[0], t[1], t[2]); }, rng);
       }},
      {"softmax_rows", [](std::mt19937& rng) { return projected({random_param({3, 5}, rng, -2, 2)}, [](T t) { return softmax(t[0], 1); }, rng); }},
      {"softmax_cols", [](std::mt19937& rng) { return projected({random_param({3, 5}, rng, -2, 2)}, [](T t) { return softmax(t[0], 0); }, rng); }},
      {"softmax_3d", [](std::mt19937& rng) { return projected({random_param({2, 3, 4}, rng, -2, 2)}, [](T t) { return softmax(t[0], 1); }, rng); }},
      {"layer_norm", [](std::mt19937& rng) {
         return projected({random_param({3, 6}, rng), random_param({6}, rng, 0.5, 1.5), random_param({6}, rng)},
                          [](T t) { return layer_norm(t[0], t[1], t[2]); }, rng);
       }},
      {"conv2d", [](std::mt19937& rng) {
         return projected({random_param({4, 5, 2}, rng), random_param({3, 3, 2, 3}, rng), random_param({3}, rng)},
                          [](T t) { return conv2d(t[0], t[1], t[2]); }, rng);
       }},
      {"conv2d_stride2", [](std::mt19937& rng) {
         return projected({random_param({5, 4, 2}, rng), random_param({3, 3, 2, 2}, rng)},
                          [](T t) { return conv2d(t[0], t[1], {}, 2); }, rng);
       }},
      {"conv1d_causal", [](std::mt19937& rng) {
         return projected({random_param({6, 3}, rng), random_param({4, 3}, rng)},
                          [](T t) { return conv1d_depthwise(t[0], t[1], Padding::Causal); }, rng);
       }},
      {"conv1d_same", [](std::mt19937& rng) {
         return projected({random_param({6, 3}, rng), random_param({3, 3}, rng)},
                          [](T t) { return conv1d_depthwise(t[0], t[1], Padding::Same); }, rng);
       }},
  };
}

inline std::vector<GradCase> model_cases() {
  using T = const std::vector<Tensor>&;
  return {
      {"discretize", [](std::mt19937& rng) {
         return projected({random_param({3, 2}, rng, -2, -0.5), random_param({4, 2}, rng), random_param({4, 3}, rng, 0.2, 1.0)},
                          [](T t) {
                            const auto [a, b] = ssm::discretize(t[0], t[1], t[2]);
                            return concat({a, b}, 0);
                          }, rng);
       }},
      {"selective_scan", [](std::mt19937& rng) {
         return projected({random_param({5, 3, 2}, rng, 0.2, 0.9), random_param({5, 3, 2}, rng), random_param({5, 2}, rng),
                           random_param({5, 3}, rng)},
                          [](T t) { return ssm::selective_scan(t[0], t[1], t[2], t[3]); }, rng);
       }},
      {"mamba_block", [](std::mt19937& rng) {
         const auto params = ssm::SsmBlockParams::init({3, 5, 2, 3}, rng);
         NamedTensors named;
         params.collect("", named);
         auto inputs = tensors_of(named);
         inputs.insert(inputs.begin(), random_param({5, 3}, rng));
         return projected(inputs, [params](T t) { return ssm::mamba_block(t[0], params); }, rng);
       }},
      {"joint_concat", [](std::mt19937& rng) {
         return projected({random_param({2, 3, 2}, rng), random_param({2, 3, 2}, rng)}, [](T t) {
           const auto [xh, xv] = jego::joint_concat(t[0], t[1]);
           return concat({reshape(xh, {12, 2}), reshape(xv, {12, 2})}, 0);
         }, rng);
       }},
      {"jego_scan", [](std::mt19937& rng) {
         const auto layout = jego::build_layout(2, 4);
         return projected({random_param({2, 8, 2}, rng), random_param({4, 4, 2}, rng)}, [layout](T t) {
           const auto s = jego::jego_scan(t[0], t[1], layout);
           return concat({s[0], s[1], s[2], s[3]}, 0);
         }, rng);
       }},
      {"jego_merge", [](std::mt19937& rng) {
         const auto layout = jego::build_layout(2, 4);
         return projected({random_param({4, 2}, rng), random_param({4, 2}, rng), random_param({4, 2}, rng), random_param({4, 2}, rng)},
                          [layout](T t) {
                            const auto [a, b] = jego::jego_merge({t[0], t[1], t[2], t[3]}, layout);
                            return concat({a, b}, 0);
                          }, rng);
       }},
      {"aggregate", [](std::mt19937& rng) {
         const auto params = jego::AggregatorParams::init(2, rng);
         NamedTensors named;
         params.collect("", named);
         auto inputs = tensors_of(named);
         inputs.insert(inputs.begin(), random_param({4, 4, 2}, rng));
         return projected(inputs, [params](T t) { return jego::aggregate(t[0], params); }, rng);
       }},
      {"joint_mamba_layer", [](std::mt19937& rng) {
         const auto params = jego::JointMambaParams::init({2, 3, 2, 2}, rng);
         return projected({random_param({2, 2, 2}, rng), random_param({2, 2, 2}, rng)}, [params](T t) {
           const auto out = jego::joint_mamba_layer(t[0], t[1], params);
           return concat({out.a, out.b}, 0);
         }, rng);
       }},
      {"mixer", [](std::mt19937& rng) {
         const auto params = matcher::MixerParams::init(3, 2, 4, 3, rng);
         NamedTensors named;
         params.collect("", named);
         auto inputs = tensors_of(named);
         inputs.insert(inputs.begin(), random_param({2, 3, 2}, rng));
         return projected(inputs, [params](T t) { return matcher::mixer(t[0], params); }, rng);
       }},
      {"coarse_similarity", [](std::mt19937& rng) {
         return projected({random_param({3, 2}, rng), random_param({4, 2}, rng)},
                          [](T t) { return matcher::coarse_similarity(t[0], t[1], Scalar(0.5)); }, rng);
       }},
      {"fine_probability", [](std::mt19937& rng) {
         return projected({random_param({2, 4, 3}, rng), random_param({2, 4, 3}, rng)},
                          [](T t) { return matcher::fine_probability(t[0], t[1], Scalar(0.5)); }, rng);
       }},
  };
}

inline supervision::GroundTruth small_ground_truth() {
  supervision::GroundTruth gt;
  gt.rows = 2;
  gt.cols = 2;
  gt.coarse = {{0, 1, 1}, {2, 2, 1}, {3, 0, 1}};
  gt.fine = {supervision::FinePositive{4, 3}, std::nullopt, supervision::FinePositive{0, 8}};
  return gt;
}

/// L_c, L_f and L_s, each from free logits or coordinates.
inline std::vector<GradCase> loss_cases() {
  using T = const std::vector<Tensor>&;
  return {
      {"focal_loss", [](std::mt19937& rng) {
         return GradInstance{{random_param({3, 4}, rng, -1, 1)}, [](T t) {
                               const std::size_t pos[] = {1, 6, 11};
                               return supervision::focal_loss(softmax(t[0], 1), pos);
                             }};
       }},
      {"L_c", [](std::mt19937& rng) {
         return GradInstance{{random_param({4, 4}, rng, -2, 2)}, [](T t) {
                               return supervision::coarse_loss(softmax(t[0], 1), softmax(t[0], 0), small_ground_truth());
                             }};
       }},
      {"L_f", [](std::mt19937& rng) {
         return GradInstance{{random_param({3, 9, 4}, rng), random_param({3, 9, 4}, rng)}, [](T t) {
                               const std::size_t windows[] = {0, 1, 2};
                               return supervision::fine_loss(matcher::fine_probability(t[0], t[1], Scalar(0.5)),
                                                             small_ground_truth(), windows);
                             }};
       }},
      {"L_s", [](std::mt19937& rng) {
         const supervision::Mat3 e =
             supervision::cross_matrix(supervision::Vec3(0.6, 0.0, 0.8)) *
             Eigen::AngleAxisd(0.2, supervision::Vec3(0.3, 1.0, 0.1).normalized()).toRotationMatrix();
         return GradInstance{{random_param({5, 3}, rng), random_param({5, 3}, rng)}, [e](T t) {
                               const auto ones = Tensor::full({5, 1}, Scalar(1));
                               const Tensor x = concat({narrow(t[0], 1, 0, 2), ones}, 1);
                               const Tensor y = concat({narrow(t[1], 1, 0, 2), ones}, 1);
                               return supervision::epipolar_loss(x, y, e).loss;
                             }};
       }},
      {"L_s_pixels", [](std::mt19937& rng) {
         const auto k = supervision::intrinsics(32);
         const supervision::Mat3 e =
             supervision::cross_matrix(supervision::Vec3(1, 0.2, 0.1).normalized()) *
             Eigen::AngleAxisd(0.1, supervision::Vec3(0, 0, 1)).toRotationMatrix();
         return GradInstance{{random_param({4, 4}, rng, 0, 31)}, [k, e](T t) {
                               return supervision::epipolar_loss_pixels(t[0], k, e).loss;
                             }};
       }},
  };
}

inline std::vector<GradCase> all_gradient_cases() {
  std::vector<GradCase> out;
  for (auto group : {elementwise_cases(), structural_cases(), linear_algebra_cases(), model_cases(), loss_cases()})
    for (auto& c : group) out.push_back(std::move(c));
  return out;
}

struct CaseReport {
  std::string name;
  double worst = 0;  // max over seeds of the elementwise error
};

inline CaseReport run_case(const GradCase& c, std::uint32_t seeds) {
  CaseReport report{c.name, 0};
  for (std::uint32_t seed = 0; seed < seeds; ++seed) {
    std::mt19937 rng(1000 + seed);
    const auto inst = c.make(rng);
    report.worst = std::max(report.worst, check_gradients(inst.f, inst.inputs).max_element_error);
  }
  return report;
}

}  // namespace jmatch::testing
