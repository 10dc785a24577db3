#pragma once

#include <functional>
#include <vector>

#include "jmatch/tensor.hpp"

namespace jmatch {

struct GradCheckResult {
  double max_relative_error = 0;  // worst input, norm-wise
  double max_element_error = 0;   // worst |a - n| / (|n| + 1e-6) over all elements
  std::size_t worst_input = 0;
};

/// Compares reverse-mode gradients of a scalar function with a five-point
/// central difference. `inputs` must be parameters; their values are restored.
GradCheckResult check_gradients(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                                const std::vector<Tensor>& inputs, double step = 1e-3);

}  // namespace jmatch
