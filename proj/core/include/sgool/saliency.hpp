#pragma once

#include <filesystem>
#include <vector>

#include "sgool/tensor.hpp"

namespace sgool {

enum class SaliencySource { spectral_residual, external };

// Per-pixel attention estimate over a generated image, normalized to [0,1].
struct SaliencyMap {
    Tensor values;  // [H,W]
    SaliencySource source = SaliencySource::spectral_residual;
    bool degenerate = false;  // constant input or zero-range map
};

struct Mask {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> on;
    std::size_t count = 0;

    bool at(int y, int x) const { return on[std::size_t(y) * width + x] != 0; }
};

// Crops of the image covering the thresholded salient regions, resized to the
// encoder input resolution. boxes[i] produced crops[i].
struct SaliencyParts {
    Mask mask;
    std::vector<CropBox> boxes;
    std::vector<Tensor> crops;
};

// Spectral-residual detector: 2-D DFT, log-amplitude minus its 3x3 box
// average, recombined with phase, inverse DFT, squared magnitude, circular
// Gaussian smoothing (sigma = W/16), min-max normalization. All convolutions
// wrap, so cyclic shifts of the input shift the map cyclically.
SaliencyMap detect_spectral_residual(const Tensor& img);

// Rank-2 SGTENSOR ingestion for maps produced by an external detector.
SaliencyMap load_external_map(const std::filesystem::path& path, const Shape& expected_shape);

// mask = value > mean + k*std; an empty result falls back to the top decile.
// A degenerate map signals the no-salient-region condition.
Mask threshold_mask(const SaliencyMap& m, double k);

// Connected components (4-connectivity) to padded bounding boxes; components
// under 1% of the image area merge into the nearest larger box, or drop when
// no larger box exists. Crops are bilinear-resized to target x target.
SaliencyParts extract_parts(const Tensor& img, const Mask& mask, int pad, int target);

Tensor mask_to_tensor(const Mask& m);

}  // namespace sgool
