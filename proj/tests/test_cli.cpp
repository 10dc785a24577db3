#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "jmatch/cli.hpp"
#include "jmatch/image.hpp"
#include "jmatch/matcher.hpp"
#include "jmatch/tensor_io.hpp"
#include "support.hpp"

using namespace jmatch;
using namespace jmatch::testing;

namespace {

struct CliResult {
  int code = 0;
  std::string out;
};

CliResult run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "jmatch");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  std::ostringstream captured;
  auto* old = std::cout.rdbuf(captured.rdbuf());
  const int code = cli::run(static_cast<int>(argv.size()), argv.data());
  std::cout.rdbuf(old);
  return {code, captured.str()};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("usage errors") {
    CHECK(run_cli({}).code == cli::kExitError);
    CHECK(run_cli({"frobnicate"}).code == cli::kExitError);
    CHECK(run_cli({"bench", "--bogus"}).code == cli::kExitError);
    CHECK(run_cli({"--help"}).code == cli::kExitOk);
  }

  TEST_CASE("dims parsing") {
    CHECK(cli::parse_dims("8x6").height == 8);
    CHECK(cli::parse_dims("8x6").width == 6);
    for (const char* bad : {"0x4", "4x0", "8", "ax3", "4x4x4", "-2x4", ""}) CHECK_THROWS_AS(cli::parse_dims(bad), cli::ConfigError);
    CHECK(run_cli({"bench", "--dims", "0x4"}).code == cli::kExitError);
    CHECK(run_cli({"bench", "--dims", "seven"}).code == cli::kExitError);
  }

  TEST_CASE("bench prints the ledger") {
    ScratchDir dir("bench");
    const auto r = run_cli({"bench", "--dims", "8x8", "--out", dir.path().string()});
    CHECK(r.code == cli::kExitOk);
    CHECK(r.out.find("JEGO,4,yes,yes,N,128") != std::string::npos);
    CHECK(r.out.find("VMamba,4,yes,yes,4N,512") != std::string::npos);
    CHECK(slurp(dir / "ledger.csv") == r.out);
    CHECK(run_cli({"bench", "--dims", "16x8"}).out.find("JEGO,4,yes,yes,N,256") != std::string::npos);
  }

  TEST_CASE("erf writes declared files") {
    ScratchDir dir("erf");
    const auto r = run_cli({"erf", "--dims", "4x4", "--out", dir.path().string()});
    CHECK(r.code == cli::kExitOk);
    CHECK(r.out.find("interior_min 1.000000") != std::string::npos);
    CHECK(slurp(dir / "coverage.csv") == slurp(std::filesystem::path(JMATCH_GOLDEN_DIR) / "coverage_4x4.csv"));
    const auto heat = read_pgm(dir / "coverage.pgm");
    CHECK(heat.width == 8);
    CHECK(heat.height == 4);
    CHECK(slurp(dir / "summary.txt") == r.out);

    CHECK(run_cli({"erf", "--dims", "3x4", "--out", dir.path().string()}).code == cli::kExitError);
    CHECK(run_cli({"erf", "--dims", "0x0", "--out", dir.path().string()}).code == cli::kExitError);
    CHECK(run_cli({"erf", "--dims", "4x4", "--style", "sideways", "--out", dir.path().string()}).code == cli::kExitError);
    CHECK(run_cli({"erf", "--dims", "4x4"}).code == cli::kExitError);
  }

  TEST_CASE("match exit codes") {
    ScratchDir dir("match");
    write_pgm(dir / "blank.pgm", GrayImage(64, 64, 0));
    write_pgm(dir / "tex.pgm", supervision::make_texture(64, 64, 5));
    const std::string out = (dir / "out").string();

    CHECK(run_cli({"match", (dir / "blank.pgm").string(), (dir / "blank.pgm").string(), "--out", out}).code == cli::kExitEmpty);
    CHECK(slurp(dir / "out" / "matches.txt").empty());

    CHECK(run_cli({"match", (dir / "tex.pgm").string(), (dir / "tex.pgm").string(), "--out", out}).code == cli::kExitOk);
    CHECK_FALSE(slurp(dir / "out" / "matches.txt").empty());

    CHECK(run_cli({"match", (dir / "tex.pgm").string(), (dir / "tex.pgm").string(), "--weights",
                   (dir / "nope").string(), "--out", out}).code == cli::kExitError);
    CHECK(run_cli({"match", (dir / "missing.pgm").string(), (dir / "tex.pgm").string(), "--out", out}).code ==
          cli::kExitError);

    std::ofstream(dir / "color.ppm", std::ios::binary) << "P6\n2 2\n255\n" << std::string(12, '\x10');
    CHECK(run_cli({"match", (dir / "color.ppm").string(), (dir / "tex.pgm").string(), "--out", out}).code ==
          cli::kExitError);
  }

  TEST_CASE("match loads a checkpoint") {
    ScratchDir dir("weights");
    write_pgm(dir / "tex.pgm", supervision::make_texture(64, 64, 6));
    const auto weights = matcher::MatcherWeights::init(matcher::MatcherConfig{}, 4);
    save_checkpoint(dir / "w", weights.named());
    const std::string img = (dir / "tex.pgm").string();
    const auto from_ckpt = run_cli({"match", img, img, "--weights", (dir / "w").string(), "--out", (dir / "a").string()});
    const auto from_seed = run_cli({"match", img, img, "--seed", "4", "--out", (dir / "b").string()});
    CHECK(from_ckpt.code == from_seed.code);
    CHECK(slurp(dir / "a" / "matches.txt") == slurp(dir / "b" / "matches.txt"));
  }

  TEST_CASE("config grammar") {
    supervision::TrainConfig cfg;
    std::istringstream ok("# comment\n\nsteps = 12  # trailing\ntemperature=0.5\nlayers = 2\n");
    cli::apply_config(ok, cfg);
    CHECK(cfg.steps == 12);
    CHECK(cfg.matcher.temperature == doctest::Approx(0.5));
    CHECK(cfg.matcher.layers == 2);

    std::istringstream unknown("steps = 3\nwarp_speed = 9\n");
    CHECK_THROWS_AS(cli::apply_config(unknown, cfg), cli::ConfigError);
    std::istringstream bad_value("steps = many\n");
    CHECK_THROWS_AS(cli::apply_config(bad_value, cfg), cli::ConfigError);
    std::istringstream no_eq("steps 3\n");
    CHECK_THROWS_AS(cli::apply_config(no_eq, cfg), cli::ConfigError);
    std::istringstream invalid("fine_window = 4\n");
    CHECK_THROWS_AS(cli::apply_config(invalid, cfg), cli::ConfigError);

    std::ostringstream os;
    cli::write_config(os, cfg);
    supervision::TrainConfig back;
    std::istringstream is(os.str());
    cli::apply_config(is, back);
    std::ostringstream again;
    cli::write_config(again, back);
    CHECK(again.str() == os.str());

    ScratchDir dir("cfg");
    std::ofstream(dir / "bad.txt") << "nonsense = 1\n";
    write_pgm(dir / "tex.pgm", supervision::make_texture(64, 64, 7));
    const std::string img = (dir / "tex.pgm").string();
    CHECK(run_cli({"match", img, img, "--config", (dir / "bad.txt").string(), "--out", dir.path().string()}).code ==
          cli::kExitError);
  }

  TEST_CASE("train input errors") {
    ScratchDir dir("train");
    CHECK(run_cli({"train", "--corpus", (dir / "none").string(), "--out", (dir / "o").string()}).code == cli::kExitError);
    CHECK(run_cli({"train", "--corpus", dir.path().string(), "--out", (dir / "o").string()}).code == cli::kExitError);
    CHECK(run_cli({"train", "--out", (dir / "o").string()}).code == cli::kExitError);
  }

  TEST_CASE("selftest and the injected fault") {
    CHECK(run_cli({"selftest"}).code == cli::kExitOk);
    const auto faulty = run_cli({"selftest", "--inject-fault"});
    CHECK(faulty.code == cli::kExitError);
    CHECK(faulty.out.find("FAIL partition") != std::string::npos);
    CHECK(faulty.out.find("PASS mode-equivalence") != std::string::npos);
  }

  TEST_CASE("synth corpus") {
    ScratchDir dir("synth");
    CHECK(run_cli({"synth", "--count", "3", "--size", "96", "--out", dir.path().string()}).code == cli::kExitOk);
    CHECK(supervision::list_corpus(dir.path()).size() == 3);
    CHECK(read_pgm(dir / "texture_002.pgm").width == 96);
    CHECK(run_cli({"synth", "--count", "0", "--out", dir.path().string()}).code == cli::kExitError);
  }

  TEST_CASE("log level from the environment") {
    ::setenv("JEGO_LOG", "loud", 1);
    CHECK(run_cli({"bench"}).code == cli::kExitError);
    ::setenv("JEGO_LOG", "debug", 1);
    CHECK(run_cli({"bench"}).code == cli::kExitOk);
    ::unsetenv("JEGO_LOG");
  }
}
