#include "sgool/synthetic.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "sgool/rng.hpp"
#include "sgool/tensor_io.hpp"

namespace sgool {

namespace {

using nlohmann::json;

struct RenderSpec {
    int shape_kind;
    int side;  // 0 = left half, 1 = right half
};

RenderSpec split_label(int label) {
    if (label < 0 || label >= kNumShapeKinds * kNumPositions) {
        throw contract_error("class id " + std::to_string(label) + " outside vocabulary");
    }
    return {label / kNumPositions, label % kNumPositions};
}

}  // namespace

std::string class_name(int label) {
    static const char* kShapes[kNumShapeKinds] = {"disk", "square", "cross", "bar"};
    static const char* kSides[kNumPositions] = {"left", "right"};
    auto spec = split_label(label);
    return std::string(kShapes[spec.shape_kind]) + "_" + kSides[spec.side];
}

Tensor render_class(int label, int height, int width, Rng& rng) {
    if (height < 8 || width < 8) throw contract_error("canvas must be at least 8x8");
    auto spec = split_label(label);

    Tensor img(Shape{1, height, width}, real(-1));
    auto d = img.mutable_data();

    const int half_w = width / 2;
    const double cx = spec.side == 0 ? half_w / 2.0 : half_w + (width - half_w) / 2.0;
    const double cy = height / 2.0;
    const double jx = cx + (rng.uniform() * 2.0 - 1.0) * 1.0;
    const double jy = cy + (rng.uniform() * 2.0 - 1.0) * 1.0;
    const double base = std::min(height, width);
    const double size = base * (0.18 + 0.05 * rng.uniform());
    const real intensity = static_cast<real>(0.6 + 0.4 * rng.uniform());

    auto put = [&](int y, int x) {
        if (y >= 0 && y < height && x >= 0 && x < width) d[std::size_t(y) * width + x] = intensity;
    };

    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const double dx = x - jx;
            const double dy = y - jy;
            bool on = false;
            switch (spec.shape_kind) {
                case 0:  // disk
                    on = dx * dx + dy * dy <= size * size;
                    break;
                case 1:  // square
                    on = std::abs(dx) <= size && std::abs(dy) <= size;
                    break;
                case 2:  // cross
                    on = (std::abs(dx) <= size * 0.45 && std::abs(dy) <= size * 1.4) ||
                         (std::abs(dy) <= size * 0.45 && std::abs(dx) <= size * 1.4);
                    break;
                case 3:  // bar
                    on = std::abs(dx) <= size * 0.4 && std::abs(dy) <= size * 1.6;
                    break;
            }
            if (on) put(y, x);
        }
    }
    return img;
}

SyntheticDataset make_dataset(int count, int height, int width, std::uint64_t seed) {
    if (count < 0) throw contract_error("make_dataset: negative count");
    SyntheticDataset ds;
    ds.height = height;
    ds.width = width;
    ds.num_classes = kNumShapeKinds * kNumPositions;
    ds.seed = seed;
    Rng rng = Rng::stream(seed, "data");
    ds.images.reserve(count);
    ds.labels.reserve(count);
    for (int i = 0; i < count; ++i) {
        const int label = i % ds.num_classes;
        ds.images.push_back(render_class(label, height, width, rng));
        ds.labels.push_back(label);
    }
    return ds;
}

void save_dataset(const std::filesystem::path& dir, const SyntheticDataset& ds) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw io_error("cannot create " + dir.string() + ": " + ec.message());

    json manifest;
    manifest["count"] = ds.images.size();
    manifest["height"] = ds.height;
    manifest["width"] = ds.width;
    manifest["num_classes"] = ds.num_classes;
    manifest["seed"] = ds.seed;
    manifest["shards"] = json::array();

    if (!ds.images.empty()) {
        const int n = static_cast<int>(ds.images.size());
        std::vector<real> pixels;
        pixels.reserve(std::size_t(n) * ds.height * ds.width);
        for (const auto& img : ds.images) {
            auto d = img.data();
            pixels.insert(pixels.end(), d.begin(), d.end());
        }
        Tensor block(Shape{n, 1, ds.height, ds.width}, std::move(pixels));
        std::vector<real> labels(ds.labels.begin(), ds.labels.end());
        Tensor label_block(Shape{n}, std::move(labels));

        write_tensor(dir / "images_000.sgt", block);
        write_tensor(dir / "labels_000.sgt", label_block);
        manifest["shards"].push_back({{"images", "images_000.sgt"},
                                      {"labels", "labels_000.sgt"},
                                      {"count", n}});
    }

    std::ofstream out(dir / "manifest.json");
    if (!out) throw io_error("cannot write manifest in " + dir.string());
    out << manifest.dump(2) << "\n";
}

SyntheticDataset load_dataset(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw io_error("no dataset manifest in " + dir.string());
    json manifest;
    try {
        in >> manifest;
    } catch (const json::exception& e) {
        throw format_error("bad dataset manifest: " + std::string(e.what()));
    }

    SyntheticDataset ds;
    ds.height = manifest.at("height").get<int>();
    ds.width = manifest.at("width").get<int>();
    ds.num_classes = manifest.at("num_classes").get<int>();
    ds.seed = manifest.at("seed").get<std::uint64_t>();

    for (const auto& shard : manifest.at("shards")) {
        Tensor block = read_tensor(dir / shard.at("images").get<std::string>());
        Tensor labels = read_tensor(dir / shard.at("labels").get<std::string>());
        if (block.rank() != 4 || block.shape()[1] != 1 || block.shape()[2] != ds.height ||
            block.shape()[3] != ds.width) {
            throw format_error("dataset shard shape mismatch: " + shape_str(block.shape()));
        }
        const int n = block.shape()[0];
        if (labels.rank() != 1 || labels.shape()[0] != n) {
            throw format_error("dataset label shard mismatch");
        }
        const std::size_t plane = std::size_t(ds.height) * ds.width;
        auto bd = block.data();
        for (int i = 0; i < n; ++i) {
            std::vector<real> px(bd.begin() + i * plane, bd.begin() + (i + 1) * plane);
            ds.images.emplace_back(Shape{1, ds.height, ds.width}, std::move(px));
            const int label = static_cast<int>(labels.at(i));
            if (label < 0 || label >= ds.num_classes) throw format_error("label outside vocabulary");
            ds.labels.push_back(label);
        }
    }
    return ds;
}

}  // namespace sgool
