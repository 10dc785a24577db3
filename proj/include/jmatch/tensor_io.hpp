#pragma once

#include <filesystem>
#include <iosfwd>

#include "jmatch/tensor.hpp"

namespace jmatch {

/// Binary tensor file: "JMT1", u32 rank, rank x u32 dims, then f32 payload,
/// all little-endian, row-major.
void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

/// Checkpoint directory: one `<name>.jmt` per tensor plus `manifest.txt` with
/// lines "name d0 d1 ...".
void save_checkpoint(const std::filesystem::path& dir, const NamedTensors& tensors);

/// Reads every tensor listed in `into` from `dir` and assigns it in place.
/// Missing entries or shape mismatches throw.
void load_checkpoint(const std::filesystem::path& dir, const NamedTensors& into);

}  // namespace jmatch
