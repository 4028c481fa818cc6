#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "mateicl/model.hpp"

namespace mateicl {

// MTW1 layout (all integers little-endian):
//   "MTW1" | u32 version = 1 | u32 tensor count
//   per tensor: u16 name length, name bytes (UTF-8), u8 dtype (0 = f32),
//               u8 rank, rank × u64 dims, row-major f32 payload

void write_mtw1(std::ostream& out, std::span<const NamedTensor> tensors);
/// Throws FormatError on bad magic/version/dtype or truncation (naming the tensor).
std::vector<NamedTensor> read_mtw1(std::istream& in);

void save_weights(const std::filesystem::path& path, const ModelConfig& config,
                  const WeightStore& weights);
WeightStore load_weights(const std::filesystem::path& path, const ModelConfig& config);

/// Reads the tensors only and derives vocab/d_model/layers/capacity from their
/// shapes; heads and ln_eps must be supplied.
ModelConfig infer_config(std::span<const NamedTensor> tensors, std::size_t n_heads, double ln_eps);

}  // namespace mateicl
