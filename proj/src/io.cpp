#include "pct/io.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "pct/errors.hpp"

namespace pct::io {

namespace {

constexpr std::array<char, 4> kMagic = {'P', 'C', 'T', '1'};

void put_u32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> bytes = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                                     static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(bytes.data(), 4);
}

std::uint32_t get_u32(std::istream& in) {
  std::array<unsigned char, 4> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 4)) throw IoError("PCT1: truncated header");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void write_pct1(std::ostream& out, const Tensor& tensor) {
  const Shape& shape = tensor.shape();
  out.write(kMagic.data(), kMagic.size());
  put_u32(out, static_cast<std::uint32_t>(shape.size()));
  for (std::size_t e : shape) put_u32(out, static_cast<std::uint32_t>(e));
  for (double v : tensor.data()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  if (!out) throw IoError("PCT1: write failed");
}

Tensor read_pct1(std::istream& in) {
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), 4)) throw IoError("PCT1: missing magic");
  if (magic != kMagic) throw IoError("PCT1: bad magic");
  const std::uint32_t rank = get_u32(in);
  if (rank == 0 || rank > 16) throw IoError("PCT1: unsupported rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& e : shape) {
    e = get_u32(in);
    if (e == 0) throw IoError("PCT1: zero extent");
  }
  std::vector<double> values(numel(shape));
  for (double& v : values) v = static_cast<double>(std::bit_cast<float>(get_u32(in)));
  return Tensor::from(std::move(shape), std::move(values));
}

std::size_t pct1_record_size(const Shape& shape) { return 8 + 4 * shape.size() + 4 * numel(shape); }

void save_tensor(const std::filesystem::path& path, const Tensor& tensor) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_pct1(out, tensor);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return read_pct1(in);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

void round_to_float32(Tensor& tensor) {
  for (double& v : tensor.mutable_data()) v = static_cast<double>(static_cast<float>(v));
}

}  // namespace pct::io
