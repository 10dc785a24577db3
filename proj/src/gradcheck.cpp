#include "jmatch/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace jmatch {

GradCheckResult check_gradients(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                                const std::vector<Tensor>& inputs, double step) {
  const Gradients analytic = backward(f(inputs), inputs);
  GradCheckResult result;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor x = inputs[k];
    std::vector<Scalar> base(x.values().begin(), x.values().end());
    auto eval_at = [&](std::size_t i, double offset) {
      std::vector<Scalar> probe = base;
      probe[i] = static_cast<Scalar>(base[i] + offset);
      x.assign(probe);
      NoGradGuard no_grad;
      return static_cast<double>(f(inputs).item());
    };
    auto a = analytic[x].values();
    double diff2 = 0, a2 = 0, n2 = 0;
    for (std::size_t i = 0; i < base.size(); ++i) {
      const double numeric = (-eval_at(i, 2 * step) + 8 * eval_at(i, step) - 8 * eval_at(i, -step) +
                              eval_at(i, -2 * step)) / (12 * step);
      diff2 += (a[i] - numeric) * (a[i] - numeric);
      result.max_element_error =
          std::max(result.max_element_error, std::abs(a[i] - numeric) / (std::abs(numeric) + 1e-6));
      a2 += static_cast<double>(a[i]) * a[i];
      n2 += numeric * numeric;
    }
    x.assign(base);
    const double denom = std::max({std::sqrt(a2), std::sqrt(n2), 1e-12});
    const double rel = a2 == 0 && n2 == 0 ? 0.0 : std::sqrt(diff2) / denom;
    if (rel > result.max_relative_error) {
      result.max_relative_error = rel;
      result.worst_input = k;
    }
  }
  return result;
}

}  // namespace jmatch
