#include "sgool/tensor_io.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace sgool {

static_assert(std::endian::native == std::endian::little,
              "SGTENSOR I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'S', 'G', 'T', 'E', 'N', 'S', 'O', 'R'};
constexpr std::uint8_t kF64 = 1;
constexpr std::uint8_t kF32 = 2;

}  // namespace

void write_tensor(const std::filesystem::path& path, const Tensor& t) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot open for writing: " + path.string());

    out.write(kMagic, 8);
    const std::uint8_t dtype = sizeof(real) == 8 ? kF64 : kF32;
    const std::uint8_t rank = static_cast<std::uint8_t>(t.rank());
    out.put(static_cast<char>(dtype));
    out.put(static_cast<char>(rank));
    for (int e : t.shape()) {
        const std::uint32_t ext = static_cast<std::uint32_t>(e);
        out.write(reinterpret_cast<const char*>(&ext), 4);
    }
    auto d = t.data();
    out.write(reinterpret_cast<const char*>(d.data()),
              static_cast<std::streamsize>(d.size() * sizeof(real)));
    if (!out) throw io_error("write failed: " + path.string());
}

Tensor read_tensor(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open for reading: " + path.string());

    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0) {
        throw format_error("not an SGTENSOR file: " + path.string());
    }
    const int dtype = in.get();
    const int rank = in.get();
    if (dtype != kF64 && dtype != kF32) {
        throw format_error("unknown dtype code " + std::to_string(dtype) + " in " + path.string());
    }
    if (rank < 0 || rank > 8 || !in) throw format_error("bad rank in " + path.string());

    Shape shape(rank);
    std::size_t numel = 1;
    for (int i = 0; i < rank; ++i) {
        std::uint32_t ext = 0;
        in.read(reinterpret_cast<char*>(&ext), 4);
        if (!in || ext == 0) throw format_error("bad extent in " + path.string());
        shape[i] = static_cast<int>(ext);
        numel *= ext;
    }
    if (rank == 0) shape = Shape{1};  // scalar payload

    std::vector<real> values(numel);
    if (dtype == kF64) {
        std::vector<double> raw(numel);
        in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(numel * 8));
        if (!in) throw format_error("truncated payload in " + path.string());
        for (std::size_t i = 0; i < numel; ++i) values[i] = static_cast<real>(raw[i]);
    } else {
        std::vector<float> raw(numel);
        in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(numel * 4));
        if (!in) throw format_error("truncated payload in " + path.string());
        for (std::size_t i = 0; i < numel; ++i) values[i] = static_cast<real>(raw[i]);
    }
    for (real v : values) {
        if (!std::isfinite(double(v))) throw format_error("non-finite value in " + path.string());
    }
    return Tensor(std::move(shape), std::move(values));
}

Tensor read_tensor(const std::filesystem::path& path, const Shape& expected_shape) {
    Tensor t = read_tensor(path);
    if (t.shape() != expected_shape) {
        throw format_error("shape " + shape_str(t.shape()) + " in " + path.string() +
                           " does not match expected " + shape_str(expected_shape));
    }
    return t;
}

}  // namespace sgool
