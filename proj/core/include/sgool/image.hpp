#pragma once

#include <filesystem>

#include "sgool/tensor.hpp"

namespace sgool {

// Images are [C,H,W] tensors with values nominally in [-1, 1].
// Export clips to that range; the sampling chain itself never clips.

// P6 binary pixmap, 8-bit. A single channel is replicated to gray RGB.
void write_ppm(const std::filesystem::path& path, const Tensor& img);

// P5 binary graymap from a rank-2 tensor in [0,1] (saliency maps, masks).
void write_pgm(const std::filesystem::path& path, const Tensor& map);

// channel mean as a rank-2 [H,W] tensor
Tensor luminance(const Tensor& img);

}  // namespace sgool
