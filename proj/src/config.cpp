#include <charconv>
#include <fstream>
#include <iomanip>
#include <istream>
#include <map>
#include <ostream>

#include "jmatch/cli.hpp"

namespace jmatch::cli {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) throw ConfigError("config: bad value '" + text + "' for " + key);
  return value;
}

using Setter = std::function<void(const std::string& key, const std::string& value)>;

template <typename T>
Setter bind(T& field) {
  return [&field](const std::string& key, const std::string& value) {
    if constexpr (std::is_same_v<T, float>) {
      field = static_cast<float>(parse_number<double>(key, value));
    } else {
      field = parse_number<T>(key, value);
    }
  };
}

std::map<std::string, Setter> setters(supervision::TrainConfig& c) {
  auto& m = c.matcher;
  return {
      {"temperature", bind(m.temperature)},
      {"coarse_threshold", bind(m.coarse_threshold)},
      {"fine_window", bind(m.fine_window)},
      {"coarse_channels", bind(m.coarse_channels)},
      {"fine_channels", bind(m.fine_channels)},
      {"expand_channels", bind(m.expand_channels)},
      {"state_channels", bind(m.state_channels)},
      {"layers", bind(m.layers)},
      {"token_hidden", bind(m.token_hidden)},
      {"offset_scale", bind(m.offset_scale)},
      {"steps", bind(c.steps)},
      {"train_pairs", bind(c.train_pairs)},
      {"val_pairs", bind(c.val_pairs)},
      {"learning_rate", bind(c.learning_rate)},
      {"momentum", bind(c.momentum)},
      {"batch_size", bind(c.batch_size)},
      {"warmup_epochs", bind(c.warmup_epochs)},
      {"grad_clip", bind(c.grad_clip)},
      {"max_windows", bind(c.max_windows)},
      {"loss_coarse", bind(c.loss_weights.coarse)},
      {"loss_fine", bind(c.loss_weights.fine)},
      {"loss_subpixel", bind(c.loss_weights.subpixel)},
      {"image_size", bind(c.synth.size)},
      {"max_rotation", bind(c.synth.max_rotation)},
      {"max_tilt", bind(c.synth.max_tilt)},
      {"max_scale", bind(c.synth.max_scale)},
      {"max_shift", bind(c.synth.max_shift)},
  };
}

}  // namespace

void apply_config(std::istream& is, supervision::TrainConfig& config) {
  // Parsed into a copy so a rejected file leaves `config` untouched.
  supervision::TrainConfig staged = config;
  auto table = setters(staged);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    auto it = table.find(key);
    if (it == table.end()) throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    it->second(key, value);
  }
  try {
    staged.matcher.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  config = staged;
}

supervision::TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path.string());
  supervision::TrainConfig config;
  apply_config(is, config);
  return config;
}

void write_config(std::ostream& os, const supervision::TrainConfig& c) {
  const auto& m = c.matcher;
  os << std::setprecision(9);
  os << "temperature = " << m.temperature << "\ncoarse_threshold = " << m.coarse_threshold
     << "\nfine_window = " << m.fine_window << "\ncoarse_channels = " << m.coarse_channels
     << "\nfine_channels = " << m.fine_channels << "\nexpand_channels = " << m.expand_channels
     << "\nstate_channels = " << m.state_channels << "\nlayers = " << m.layers << "\ntoken_hidden = " << m.token_hidden
     << "\noffset_scale = " << m.offset_scale << "\nsteps = " << c.steps << "\ntrain_pairs = " << c.train_pairs
     << "\nval_pairs = " << c.val_pairs << "\nlearning_rate = " << c.learning_rate << "\nmomentum = " << c.momentum
     << "\nbatch_size = " << c.batch_size << "\nwarmup_epochs = " << c.warmup_epochs << "\ngrad_clip = " << c.grad_clip
     << "\nmax_windows = " << c.max_windows
     << "\nloss_coarse = " << c.loss_weights.coarse << "\nloss_fine = " << c.loss_weights.fine
     << "\nloss_subpixel = " << c.loss_weights.subpixel << "\nimage_size = " << c.synth.size
     << "\nmax_rotation = " << c.synth.max_rotation << "\nmax_tilt = " << c.synth.max_tilt
     << "\nmax_scale = " << c.synth.max_scale << "\nmax_shift = " << c.synth.max_shift << '\n';
}

Dims parse_dims(const std::string& text) {
  const auto x = text.find('x');
  if (x == std::string::npos) throw ConfigError("dims must look like HxW, got '" + text + "'");
  Dims d;
  d.height = parse_number<std::size_t>("dims", text.substr(0, x));
  d.width = parse_number<std::size_t>("dims", text.substr(x + 1));
  if (d.height == 0 || d.width == 0) throw ConfigError("dims must be positive, got '" + text + "'");
  return d;
}

}  // namespace jmatch::cli
