#pragma once

#include <filesystem>
#include <iosfwd>

#include "pct/tensor.hpp"

// "PCT1" tensor records: magic, u32 LE rank, rank x u32 LE extents, then
// row-major IEEE-754 float32 LE values. Values are narrowed to float32 on
// write and widened back on read.
namespace pct::io {

void write_pct1(std::ostream& out, const Tensor& tensor);
Tensor read_pct1(std::istream& in);

// Number of bytes write_pct1 emits for a tensor of this shape.
std::size_t pct1_record_size(const Shape& shape);

void save_tensor(const std::filesystem::path& path, const Tensor& tensor);
Tensor load_tensor(const std::filesystem::path& path);

// Rounds every value through float32, matching what a save/load cycle yields.
void round_to_float32(Tensor& tensor);

}  // namespace pct::io
