#include "jmatch/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace jmatch {

namespace {

constexpr std::array<char, 4> kMagic{'J', 'M', 'T', '1'};

void put_u32(std::ostream& os, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                              static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(b.data(), 4);
}

std::uint32_t get_u32(std::istream& is) {
  std::array<unsigned char, 4> b{};
  if (!is.read(reinterpret_cast<char*>(b.data()), 4)) throw TensorError("tensor file truncated");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void write_tensor(std::ostream& os, const Tensor& t) {
  os.write(kMagic.data(), kMagic.size());
  put_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) put_u32(os, static_cast<std::uint32_t>(d));
  for (auto v : t.values()) put_u32(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  if (!os) throw TensorError("failed writing tensor");
}

Tensor read_tensor(std::istream& is) {
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), 4) || magic != kMagic) throw TensorError("not a JMT1 tensor file");
  const std::uint32_t rank = get_u32(is);
  if (rank > 16) throw TensorError("tensor file rank too large");
  Shape shape(rank);
  for (auto& d : shape) d = get_u32(is);
  std::vector<Scalar> values(shape_numel(shape));
  for (auto& v : values) v = static_cast<Scalar>(std::bit_cast<float>(get_u32(is)));
  return Tensor::from_values(std::move(shape), std::move(values));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw TensorError("cannot open " + path.string() + " for writing");
  write_tensor(os, t);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw TensorError("cannot open " + path.string());
  return read_tensor(is);
}

void save_checkpoint(const std::filesystem::path& dir, const NamedTensors& tensors) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "manifest.txt");
  if (!manifest) throw TensorError("cannot write manifest in " + dir.string());
  for (const auto& [name, t] : tensors) {
    save_tensor(dir / (name + ".jmt"), t);
    manifest << name;
    for (auto d : t.shape()) manifest << ' ' << d;
    manifest << '\n';
  }
}

void load_checkpoint(const std::filesystem::path& dir, const NamedTensors& into) {
  std::ifstream manifest(dir / "manifest.txt");
  if (!manifest) throw TensorError("no checkpoint manifest in " + dir.string());
  std::map<std::string, Shape> listed;
  std::string line;
  while (std::getline(manifest, line)) {
    std::istringstream ls(line);
    std::string name;
    if (!(ls >> name)) continue;
    Shape shape;
    std::size_t d = 0;
    while (ls >> d) shape.push_back(d);
    listed[name] = shape;
  }
  for (const auto& [name, target] : into) {
    auto it = listed.find(name);
    if (it == listed.end()) throw TensorError("checkpoint is missing tensor '" + name + "'");
    if (it->second != target.shape()) {
      throw TensorError("checkpoint tensor '" + name + "' has shape " + shape_string(it->second) + ", expected " +
                        shape_string(target.shape()));
    }
    Tensor loaded = load_tensor(dir / (name + ".jmt"));
    if (loaded.shape() != target.shape()) throw TensorError("tensor file for '" + name + "' disagrees with manifest");
    Tensor writable = target;
    writable.assign(loaded.values());
  }
}

}  // namespace jmatch
