#include "sgool/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace sgool {

namespace {

unsigned char to_byte(double v) {
    const double mapped = (std::clamp(v, -1.0, 1.0) + 1.0) * 0.5 * 255.0;
    return static_cast<unsigned char>(std::lround(mapped));
}

}  // namespace

void write_ppm(const std::filesystem::path& path, const Tensor& img) {
    if (img.rank() != 3) throw dim_error("write_ppm expects [C,H,W], got " + shape_str(img.shape()));
    const int C = img.shape()[0], H = img.shape()[1], W = img.shape()[2];
    if (C != 1 && C != 3) throw dim_error("write_ppm supports 1 or 3 channels");

    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot open for writing: " + path.string());
    out << "P6\n" << W << " " << H << "\n255\n";
    auto d = img.data();
    const std::size_t plane = std::size_t(H) * W;
    for (std::size_t i = 0; i < plane; ++i) {
        for (int c = 0; c < 3; ++c) {
            const std::size_t src = (C == 1 ? 0 : std::size_t(c)) * plane + i;
            out.put(static_cast<char>(to_byte(double(d[src]))));
        }
    }
    if (!out) throw io_error("write failed: " + path.string());
}

void write_pgm(const std::filesystem::path& path, const Tensor& map) {
    if (map.rank() != 2) throw dim_error("write_pgm expects [H,W], got " + shape_str(map.shape()));
    const int H = map.shape()[0], W = map.shape()[1];
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot open for writing: " + path.string());
    out << "P5\n" << W << " " << H << "\n255\n";
    for (real v : map.data()) {
        const double clipped = std::clamp(double(v), 0.0, 1.0);
        out.put(static_cast<char>(std::lround(clipped * 255.0)));
    }
    if (!out) throw io_error("write failed: " + path.string());
}

Tensor luminance(const Tensor& img) {
    if (img.rank() == 2) return img.detach();
    if (img.rank() != 3) throw dim_error("luminance expects [C,H,W] or [H,W]");
    const int C = img.shape()[0], H = img.shape()[1], W = img.shape()[2];
    const std::size_t plane = std::size_t(H) * W;
    std::vector<real> out(plane, real(0));
    auto d = img.data();
    for (int c = 0; c < C; ++c) {
        for (std::size_t i = 0; i < plane; ++i) out[i] += d[c * plane + i];
    }
    const real inv = real(1) / static_cast<real>(C);
    for (auto& v : out) v *= inv;
    return Tensor(Shape{H, W}, std::move(out));
}

}  // namespace sgool
