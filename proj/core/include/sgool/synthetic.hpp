#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sgool/tensor.hpp"

namespace sgool {

// Class-conditional toy data: a shape (disk, square, cross, bar) rendered in
// the left or right half of a [1,H,W] canvas. Class id = shape*2 + side,
// K = 8 classes. Pixels lie in [-1, 1] (background -1).
struct SyntheticDataset {
    int height = 16;
    int width = 16;
    int num_classes = 8;
    std::uint64_t seed = 0;
    std::vector<Tensor> images;  // each [1,H,W]
    std::vector<int> labels;
};

inline constexpr int kNumShapeKinds = 4;
inline constexpr int kNumPositions = 2;

std::string class_name(int label);

// One jittered render of class `label`; jitter drawn from `rng`.
Tensor render_class(int label, int height, int width, class Rng& rng);

// `count` samples cycling through all classes.
SyntheticDataset make_dataset(int count, int height, int width, std::uint64_t seed);

// SGTENSOR shard(s) + JSON manifest
void save_dataset(const std::filesystem::path& dir, const SyntheticDataset& ds);
SyntheticDataset load_dataset(const std::filesystem::path& dir);

}  // namespace sgool
