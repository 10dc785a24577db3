#pragma once

#include <unistd.h>

#include <algorithm>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "jmatch/tensor.hpp"

namespace jmatch::testing {

inline Tensor random_tensor(Shape shape, std::mt19937& rng, double lo = -1, double hi = 1, bool param = false) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<Scalar> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<Scalar>(u(rng));
  return param ? Tensor::parameter(std::move(shape), std::move(v)) : Tensor::from_values(std::move(shape), std::move(v));
}

inline Tensor random_param(Shape shape, std::mt19937& rng, double lo = -1, double hi = 1) {
  return random_tensor(std::move(shape), rng, lo, hi, true);
}

inline bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::equal(a.values().begin(), a.values().end(), b.values().begin());
}

/// Fresh scratch directory under the system temp dir, removed on destruction.
class ScratchDir {
 public:
  explicit ScratchDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("jmatch_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace jmatch::testing
