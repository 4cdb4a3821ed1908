#pragma once

#include <filesystem>

#include "sgool/tensor.hpp"

namespace sgool {

// SGTENSOR container: 8-byte magic "SGTENSOR", u8 dtype (1=f64, 2=f32),
// u8 rank, little-endian u32 extents, then the row-major payload.
// Used for latents, checkpoints, dataset shards and external saliency maps.

void write_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor read_tensor(const std::filesystem::path& path);

// read + shape validation in one step
Tensor read_tensor(const std::filesystem::path& path, const Shape& expected_shape);

}  // namespace sgool
