#include <CLI11.hpp>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>

#include "jmatch/analysis.hpp"
#include "jmatch/cli.hpp"
#include "jmatch/image.hpp"
#include "jmatch/matcher.hpp"
#include "jmatch/tensor_io.hpp"

namespace jmatch::cli {

namespace fs = std::filesystem;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void setup_logging() {
  spdlog::drop("jmatch");
  auto logger = spdlog::stderr_logger_st("jmatch");
  logger->set_pattern("[%l] %v");
  const char* env = std::getenv("JEGO_LOG");
  const std::string level = env ? env : "off";
  if (level == "off") {
    logger->set_level(spdlog::level::off);
  } else if (level == "info") {
    logger->set_level(spdlog::level::info);
  } else if (level == "debug") {
    logger->set_level(spdlog::level::debug);
  } else {
    throw UsageError("JEGO_LOG must be off, info or debug, got '" + level + "'");
  }
  spdlog::set_default_logger(logger);
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw UsageError("cannot create output directory " + dir.string());
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw UsageError("cannot write " + path.string());
  return os;
}

supervision::TrainConfig effective_config(const std::string& config_path) {
  return config_path.empty() ? supervision::TrainConfig{} : load_config(config_path);
}

struct Common {
  std::uint32_t seed = 0;
  std::string config;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool needs_out) {
  cmd->add_option("--seed", c.seed, "random seed")->capture_default_str();
  cmd->add_option("--config", c.config, "key = value configuration file");
  auto* out = cmd->add_option("--out", c.out, "output directory");
  if (needs_out) out->required();
}

int cmd_match(const std::string& path_a, const std::string& path_b, const std::string& weights_dir, const Common& c) {
  const auto cfg = effective_config(c.config);
  const GrayImage a = read_pgm(path_a), b = read_pgm(path_b);
  auto weights = matcher::MatcherWeights::init(cfg.matcher, c.seed);
  if (!weights_dir.empty()) {
    if (!fs::is_directory(weights_dir)) throw UsageError("weights directory not found: " + weights_dir);
    load_checkpoint(weights_dir, weights.named());
    spdlog::info("loaded weights from {}", weights_dir);
  } else {
    spdlog::info("no weights given, using initialisation from seed {}", c.seed);
  }
  const auto matches = matcher::match_pair(a, b, weights, cfg.matcher);
  ensure_dir(c.out);
  auto os = open_out(fs::path(c.out) / "matches.txt");
  matcher::write_matches(os, matches);
  spdlog::info("{} coarse, {} fine matches", matches.coarse.size(), matches.fine.size());
  return matches.empty() ? kExitEmpty : kExitOk;
}

int cmd_train(const std::string& corpus_dir, const Common& c) {
  auto cfg = effective_config(c.config);
  cfg.seed = c.seed;
  supervision::Corpus corpus;
  try {
    corpus = supervision::load_corpus(corpus_dir);
  } catch (const supervision::TrainingError& e) {
    throw UsageError(e.what());
  }
  ensure_dir(c.out);
  std::ostringstream progress;
  const auto result = supervision::train(corpus, cfg, &progress);
  spdlog::debug("{}", progress.str());

  save_checkpoint(fs::path(c.out) / "weights", result.weights.named());
  auto metrics = open_out(fs::path(c.out) / "metrics.csv");
  supervision::write_metrics(metrics, result.log);
  auto config = open_out(fs::path(c.out) / "config.txt");
  write_config(config, cfg);
  std::cout << std::setprecision(6) << std::fixed << "initial_loss " << result.initial_loss << "\nfinal_loss "
            << result.final_loss << "\nprecision " << result.final_precision << '\n';
  return kExitOk;
}

int cmd_bench(const std::string& dims_text, const Common& c) {
  const Dims d = parse_dims(dims_text);
  const auto rows = analysis::ledger(d.height, d.width);
  analysis::write_ledger_csv(std::cout, rows);
  if (!c.out.empty()) {
    ensure_dir(c.out);
    auto os = open_out(fs::path(c.out) / "ledger.csv");
    analysis::write_ledger_csv(os, rows);
  }
  return kExitOk;
}

int cmd_erf(const std::string& dims_text, const std::string& style, std::size_t radius, const Common& c) {
  const Dims d = parse_dims(dims_text);
  if (d.height % 2 || d.width % 2) throw UsageError("erf needs even grid extents, got " + dims_text);
  const auto scan_style = style == "forward" ? jego::ScanStyle::ForwardOnly : jego::ScanStyle::Jego;
  const auto report = analysis::coverage_report(d.height, d.width, scan_style, radius);
  ensure_dir(c.out);
  auto csv = open_out(fs::path(c.out) / "coverage.csv");
  analysis::write_coverage_csv(csv, report);
  write_pgm(fs::path(c.out) / "coverage.pgm", analysis::coverage_heatmap(report));
  std::ostringstream summary;
  summary << std::setprecision(6) << std::fixed << "min " << report.min << "\nmean " << report.mean
          << "\ninterior_min " << report.interior_min << '\n';
  auto sum_os = open_out(fs::path(c.out) / "summary.txt");
  sum_os << summary.str();
  std::cout << summary.str();
  return kExitOk;
}

int cmd_selftest(bool inject_fault) {
  SelftestOptions options;
  if (inject_fault) options.layout_hook = corrupt_merge_layout;
  bool ok = true;
  for (const auto& r : run_selftest(options)) {
    std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << " (" << r.detail << ")\n";
    ok = ok && r.passed;
  }
  return ok ? kExitOk : kExitError;
}

int cmd_synth(std::size_t count, std::size_t size, const Common& c) {
  if (count == 0 || size < 96) throw UsageError("synth needs count > 0 and size >= 96");
  ensure_dir(c.out);
  for (std::size_t i = 0; i < count; ++i) {
    std::ostringstream name;
    name << "texture_" << std::setw(3) << std::setfill('0') << i << ".pgm";
    write_pgm(fs::path(c.out) / name.str(), supervision::make_texture(size, size, c.seed * 1000003u + i));
  }
  return kExitOk;
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"Joint-scan state-space feature matcher"};
  app.require_subcommand(1);

  Common common;
  std::string image_a, image_b, weights, corpus, dims = "8x8", style = "jego";
  std::size_t radius = 1, count = 20, size = 128;
  bool inject_fault = false;

  auto* match = app.add_subcommand("match", "match two PGM images");
  match->add_option("image_a", image_a)->required();
  match->add_option("image_b", image_b)->required();
  match->add_option("--weights", weights, "checkpoint directory");
  add_common(match, common, true);

  auto* train = app.add_subcommand("train", "train on a corpus of PGM images");
  train->add_option("--corpus", corpus)->required();
  add_common(train, common, true);

  auto* bench = app.add_subcommand("bench", "token ledger of scan strategies");
  bench->add_option("--dims", dims, "coarse grid HxW")->capture_default_str();
  add_common(bench, common, false);

  auto* erf = app.add_subcommand("erf", "receptive-field coverage maps");
  erf->add_option("--dims", dims, "coarse grid HxW")->capture_default_str();
  erf->add_option("--style", style, "jego or forward")->check(CLI::IsMember({"jego", "forward"}));
  erf->add_option("--radius", radius, "aggregation radius")->capture_default_str();
  add_common(erf, common, true);

  auto* selftest = app.add_subcommand("selftest", "run the invariant suites");
  selftest->add_flag("--inject-fault", inject_fault, "corrupt the merge layout");

  auto* synth = app.add_subcommand("synth", "write a procedural texture corpus");
  synth->add_option("--count", count)->capture_default_str();
  synth->add_option("--size", size)->capture_default_str();
  add_common(synth, common, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitError;
  }

  try {
    setup_logging();
    if (*match) return cmd_match(image_a, image_b, weights, common);
    if (*train) return cmd_train(corpus, common);
    if (*bench) return cmd_bench(dims, common);
    if (*erf) return cmd_erf(dims, style, radius, common);
    if (*selftest) return cmd_selftest(inject_fault);
    if (*synth) return cmd_synth(count, size, common);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitError;
  }
  return kExitError;
}

}  // namespace jmatch::cli
