#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "jmatch/jego.hpp"
#include "jmatch/supervision.hpp"

namespace jmatch::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;  // usage or IO
inline constexpr int kExitEmpty = 2;  // ran fine, nothing matched

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Line-oriented "key = value"; '#' starts a comment. Unknown keys throw.
void apply_config(std::istream& is, supervision::TrainConfig& config);
supervision::TrainConfig load_config(const std::filesystem::path& path);
void write_config(std::ostream& os, const supervision::TrainConfig& config);

struct Dims {
  std::size_t height = 0;
  std::size_t width = 0;
};

/// "HxW" with both extents positive.
Dims parse_dims(const std::string& text);

struct SuiteResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct SelftestOptions {
  /// Applied to every layout before the round-trip and partition suites.
  std::function<void(jego::ScanLayout&)> layout_hook;
};

/// Test hook: makes direction 2 revisit the first token of direction 1.
void corrupt_merge_layout(jego::ScanLayout& layout);

std::vector<SuiteResult> run_selftest(const SelftestOptions& options = {});

/// Entry point; returns the process exit code.
int run(int argc, char** argv);

}  // namespace jmatch::cli
