#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "sgool/image.hpp"
#include "sgool/rng.hpp"
#include "sgool/tensor_io.hpp"

using namespace sgool;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("sgool_io_test_" + std::to_string(::getpid()));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

}  // namespace

TEST_CASE("tensor file round trip preserves bytes and values") {
    TempDir tmp;
    Rng rng(3);
    Tensor t(Shape{2, 3, 4});
    auto d = t.mutable_data();
    for (auto& v : d) v = static_cast<real>(rng.normal());

    const fs::path file = tmp.path / "t.sgt";
    write_tensor(file, t);
    Tensor back = read_tensor(file);
    REQUIRE(back.shape() == t.shape());
    for (std::size_t i = 0; i < t.numel(); ++i) CHECK(back.at(i) == t.at(i));

    // header layout: magic, dtype, rank, extents
    std::ifstream in(file, std::ios::binary);
    char magic[8];
    in.read(magic, 8);
    CHECK(std::string(magic, 8) == "SGTENSOR");
    CHECK(in.get() == (sizeof(real) == 8 ? 1 : 2));
    CHECK(in.get() == 3);

    // writing twice produces identical bytes
    const fs::path file2 = tmp.path / "t2.sgt";
    write_tensor(file2, t);
    std::ifstream a(file, std::ios::binary), b(file2, std::ios::binary);
    std::string sa((std::istreambuf_iterator<char>(a)), {});
    std::string sb((std::istreambuf_iterator<char>(b)), {});
    CHECK(sa == sb);
}

TEST_CASE("tensor file error paths") {
    TempDir tmp;
    CHECK_THROWS_AS(read_tensor(tmp.path / "missing.sgt"), io_error);

    const fs::path bad = tmp.path / "bad.sgt";
    {
        std::ofstream out(bad, std::ios::binary);
        out << "NOTMAGIC01234";
    }
    CHECK_THROWS_AS(read_tensor(bad), format_error);

    const fs::path trunc = tmp.path / "trunc.sgt";
    {
        Tensor t(Shape{4, 4}, real(1));
        write_tensor(trunc, t);
        fs::resize_file(trunc, 20);
    }
    CHECK_THROWS_AS(read_tensor(trunc), format_error);

    const fs::path ok = tmp.path / "ok.sgt";
    write_tensor(ok, Tensor(Shape{2, 2}, real(0)));
    CHECK_THROWS_AS(read_tensor(ok, Shape{4}), format_error);
    CHECK_NOTHROW(read_tensor(ok, Shape{2, 2}));
}

TEST_CASE("ppm and pgm export") {
    TempDir tmp;
    Tensor img(Shape{1, 2, 2}, {-1, 1, 0, 2});  // 2 clips to 1
    const fs::path p6 = tmp.path / "img.ppm";
    write_ppm(p6, img);
    std::ifstream in(p6, std::ios::binary);
    std::string head;
    in >> head;
    CHECK(head == "P6");
    int w, h, maxv;
    in >> w >> h >> maxv;
    CHECK(w == 2);
    CHECK(h == 2);
    CHECK(maxv == 255);
    in.get();
    unsigned char px[12];
    in.read(reinterpret_cast<char*>(px), 12);
    CHECK(px[0] == 0);    // -1 -> 0
    CHECK(px[3] == 255);  // 1 -> 255
    CHECK(px[6] == 128);  // 0 -> round(127.5)
    CHECK(px[9] == 255);  // clipped

    Tensor map(Shape{2, 2}, {0, 0.5, 1, 0.25});
    const fs::path p5 = tmp.path / "map.pgm";
    write_pgm(p5, map);
    std::ifstream gin(p5, std::ios::binary);
    gin >> head;
    CHECK(head == "P5");
}

TEST_CASE("luminance averages channels") {
    Tensor img(Shape{3, 1, 2}, {0, 1, 0.5, 0.5, 1, 0});
    Tensor lum = luminance(img);
    REQUIRE(lum.shape() == Shape{1, 2});
    CHECK(double(lum.at(0)) == doctest::Approx(0.5));
    CHECK(double(lum.at(1)) == doctest::Approx(0.5));
}
