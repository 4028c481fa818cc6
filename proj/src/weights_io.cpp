#include "mateicl/weights_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "mateicl/error.hpp"

namespace mateicl {

namespace {

constexpr std::array<char, 4> kMagic = {'M', 'T', 'W', '1'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint8_t kDtypeF32 = 0;

template <typename T>
void put_le(std::ostream& out, T value) {
  char bytes[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    bytes[i] = static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xFF);
  }
  out.write(bytes, sizeof(T));
}

template <typename T>
T get_le(std::istream& in, const std::string& what) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) {
    throw FormatError("MTW1: truncated while reading " + what);
  }
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return static_cast<T>(v);
}

}  // namespace

void write_mtw1(std::ostream& out, std::span<const NamedTensor> tensors) {
  out.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(out, kVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    if (t.name.size() > 0xFFFF) throw FormatError("MTW1: tensor name too long");
    std::uint64_t count = 1;
    for (auto dim : t.dims) count *= dim;
    if (count != t.data.size()) throw ShapeError("MTW1: tensor '" + t.name + "' payload/dims mismatch");
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    put_le<std::uint8_t>(out, kDtypeF32);
    put_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.dims.size()));
    for (auto dim : t.dims) put_le<std::uint64_t>(out, dim);
    for (float v : t.data) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  }
  if (!out) throw FormatError("MTW1: write failed");
}

std::vector<NamedTensor> read_mtw1(std::istream& in) {
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) throw FormatError("MTW1: bad magic");
  const auto version = get_le<std::uint32_t>(in, "version");
  if (version != kVersion) throw FormatError("MTW1: unsupported version " + std::to_string(version));
  const auto count = get_le<std::uint32_t>(in, "tensor count");
  std::vector<NamedTensor> tensors;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string slot = "tensor #" + std::to_string(i);
    NamedTensor t;
    const auto name_len = get_le<std::uint16_t>(in, slot + " name length");
    t.name.resize(name_len);
    if (!in.read(t.name.data(), name_len)) throw FormatError("MTW1: truncated name of " + slot);
    const auto dtype = get_le<std::uint8_t>(in, "dtype of '" + t.name + "'");
    if (dtype != kDtypeF32) {
      throw FormatError("MTW1: tensor '" + t.name + "' has unsupported dtype " + std::to_string(dtype));
    }
    const auto rank = get_le<std::uint8_t>(in, "rank of '" + t.name + "'");
    std::uint64_t elements = 1;
    for (std::uint8_t r = 0; r < rank; ++r) {
      t.dims.push_back(get_le<std::uint64_t>(in, "dims of '" + t.name + "'"));
      elements *= t.dims.back();
    }
    if (elements > (std::uint64_t{1} << 34)) throw FormatError("MTW1: tensor '" + t.name + "' is implausibly large");
    std::vector<char> raw(elements * 4);
    if (!in.read(raw.data(), static_cast<std::streamsize>(raw.size()))) {
      throw FormatError("MTW1: truncated payload of tensor '" + t.name + "'");
    }
    t.data.resize(elements);
    for (std::uint64_t e = 0; e < elements; ++e) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) {
        bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(raw[e * 4 + b])) << (8 * b);
      }
      t.data[e] = std::bit_cast<float>(bits);
    }
    tensors.push_back(std::move(t));
  }
  return tensors;
}

void save_weights(const std::filesystem::path& path, const ModelConfig& config,
                  const WeightStore& weights) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open '" + path.string() + "' for writing");
  const auto tensors = to_named_tensors(config, weights);
  write_mtw1(out, tensors);
}

WeightStore load_weights(const std::filesystem::path& path, const ModelConfig& config) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");
  return from_named_tensors(config, read_mtw1(in));
}

ModelConfig infer_config(std::span<const NamedTensor> tensors, std::size_t n_heads, double ln_eps) {
  ModelConfig c;
  c.n_heads = n_heads;
  c.ln_eps = ln_eps;
  c.tied_unembedding = true;
  for (const auto& t : tensors) {
    if (t.name == "token_embedding" && t.dims.size() == 2) {
      c.vocab_size = t.dims[0];
      c.d_model = t.dims[1];
    } else if (t.name == "position_embedding" && t.dims.size() == 2) {
      c.max_positions = t.dims[0];
    } else if (t.name == "unembedding") {
      c.tied_unembedding = false;
    } else if (t.name.rfind("layers.", 0) == 0) {
      const std::size_t layer = std::stoul(t.name.substr(7));
      c.n_layers = std::max(c.n_layers, layer + 1);
    }
  }
  c.validate();
  return c;
}

}  // namespace mateicl
