#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cmath>

#include "sgool/nn.hpp"
#include "sgool/rng.hpp"
#include "sgool/tensor.hpp"

using namespace sgool;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(shape);
    auto d = t.mutable_data();
    for (auto& v : d) v = static_cast<real>(lo + (hi - lo) * rng.uniform());
    return t;
}

}  // namespace

TEST_CASE("componentwise examples") {
    Tensor a(Shape{2}, {1, 2});
    Tensor b(Shape{2}, {3, 4});
    Tensor c = add(a, b);
    CHECK(c.at(0) == doctest::Approx(4.0));
    CHECK(c.at(1) == doctest::Approx(6.0));

    Tensor eye(Shape{2, 2}, {1, 0, 0, 1});
    Tensor v(Shape{2}, {5, -3});
    Tensor mv = matmul(eye, v);
    CHECK(mv.at(0) == doctest::Approx(5.0));
    CHECK(mv.at(1) == doctest::Approx(-3.0));

    Tensor x = Tensor::scalar(real(0.7071067811865476));
    CHECK(double(arcsin(x).item()) == doctest::Approx(0.7853981633974484).epsilon(1e-12));
}

TEST_CASE("shape and domain errors") {
    Tensor a(Shape{2}, {1, 2});
    Tensor b(Shape{3}, {1, 2, 3});
    CHECK_THROWS_AS(add(a, b), dim_error);
    CHECK_THROWS_AS(matmul(a, b), dim_error);
    CHECK_THROWS_AS(arcsin(Tensor::scalar(real(1.5))), domain_error);
    CHECK_THROWS_AS(sqrt(Tensor::scalar(real(-0.1))), domain_error);
    CHECK_THROWS_AS(log(Tensor::scalar(real(0))), domain_error);
    CHECK_THROWS_AS(div(a, Tensor::scalar(real(0))), domain_error);
}

TEST_CASE("backward basics") {
    SUBCASE("sum gives ones") {
        Tensor x(Shape{3}, {2, -1, 5});
        x.set_requires_grad(true);
        backward(sum(x));
        auto g = x.grad();
        for (real v : g) CHECK(double(v) == doctest::Approx(1.0));
    }
    SUBCASE("half squared norm gives x") {
        Tensor x(Shape{2}, {3, 4});
        x.set_requires_grad(true);
        Tensor n = l2norm(x);
        backward(scalar_mul(mul(n, n), real(0.5)));
        CHECK(double(x.grad()[0]) == doctest::Approx(3.0));
        CHECK(double(x.grad()[1]) == doctest::Approx(4.0));
    }
    SUBCASE("non-scalar root rejected") {
        Tensor x(Shape{2}, {1, 2});
        x.set_requires_grad(true);
        Tensor y = add(x, x);
        CHECK_THROWS_AS(backward(y), contract_error);
    }
    SUBCASE("double backward rejected") {
        Tensor x(Shape{2}, {1, 2});
        x.set_requires_grad(true);
        Tensor y = sum(x);
        backward(y);
        CHECK_THROWS_AS(backward(y), unsupported_error);
    }
}

TEST_CASE("gradient accumulation is linear") {
    Tensor x(Shape{3}, {0.5, -0.25, 1.5});
    x.set_requires_grad(true);
    backward(sum(mul(x, x)));
    std::array<double, 3> first{};
    for (int i = 0; i < 3; ++i) first[i] = double(x.grad()[i]);
    backward(mean(x));
    for (int i = 0; i < 3; ++i) {
        CHECK(double(x.grad()[i]) == doctest::Approx(first[i] + 1.0 / 3.0).epsilon(1e-12));
    }

    // separate passes on a fresh leaf reproduce the accumulated total
    Tensor z(Shape{3}, {0.5, -0.25, 1.5});
    z.set_requires_grad(true);
    backward(add(sum(mul(z, z)), mean(z)));
    for (int i = 0; i < 3; ++i) {
        CHECK(double(z.grad()[i]) == doctest::Approx(double(x.grad()[i])).epsilon(1e-12));
    }
}

TEST_CASE("grad_check closed forms") {
    Tensor x(Shape{3}, {1, 2, 3});
    CHECK(grad_check([](const Tensor& t) { return sum(t); }, x, 1e-2) <= 1e-12);
    CHECK(grad_check(
              [](const Tensor& t) {
                  Tensor n = l2norm(t);
                  return scalar_mul(mul(n, n), real(0.5));
              },
              x, 1e-5) <= 1e-9);
}

TEST_CASE("spec example: mean(tanh(Wx)) matches finite differences") {
    Rng rng(42);
    Tensor w = random_tensor(Shape{4, 4}, rng);
    Tensor x = random_tensor(Shape{4}, rng);
    const double err =
        grad_check([&](const Tensor& t) { return mean(tanh(matmul(w, t))); }, x, 1e-5);
    CHECK(err <= 1e-6);
}

// Every primitive's vector-Jacobian product against central differences.
TEST_CASE("per-primitive finite-difference property") {
    for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
        Rng rng(seed);
        CAPTURE(seed);
        Tensor a = random_tensor(Shape{2, 3}, rng);
        Tensor b = random_tensor(Shape{2, 3}, rng, 0.5, 1.5);  // positive, usable as divisor
        Tensor v = random_tensor(Shape{3}, rng);
        Tensor m = random_tensor(Shape{3, 2}, rng);
        Tensor s = random_tensor(Shape{1}, rng, 0.5, 1.0);

        auto fd = [&](auto f, const Tensor& at) { return grad_check(f, at, 1e-5); };

        CHECK(fd([&](const Tensor& t) { return sum(add(t, b)); }, a) <= 1e-6);
        CHECK(fd([&](const Tensor& t) { return sum(sub(b, t)); }, a) <= 1e-6);
        CHECK(fd([&](const Tensor& t) { return sum(mul(t, b)); }, a) <= 1e-6);
        CHECK(fd([&](const Tensor& t) { return sum(div(t, b)); }, a) <= 1e-6);
        CHECK(fd([&](const Tensor& t) { return sum(div(a, t)); }, b) <= 1e-6);
        CHECK(fd([&](const Tensor& t) { return sum(mul(t, s)); }, a) <= 1e-6);      // scalar bcast
        CHECK(fd([&](const Tensor& t) { return sum(add(s, t)); }, a) <= 1e-6);      // scalar bcast
        CHECK(fd([&](const Tensor& t) { return sum(mul(a, t)); }, s) <= 1e-6);      // grad to scalar
        CHECK(fd([&](const Tensor& t) { return sum(scalar_mul(t, real(1.7))); }, a) <= 1e-6);
        CHECK(fd([&](const Tensor& t) { return sum(matmul(t, m)); }, a) <= 1e-6);
        CHECK(fd([&](const Tensor& t) { return sum(matmul(a, t)); }, m) <= 1e-6);
        CHECK(fd([&](const Tensor& t) { return sum(matmul(a, reshape(t, Shape{3}))); },
                 reshape(v, Shape{3})) <= 1e-6);
        CHECK(fd([&](const Tensor& t) { return sum(tanh(t)); }, a) <= 1e-6);
        CHECK(fd([&](const Tensor& t) { return sum(silu(t)); }, a) <= 1e-6);
        CHECK(fd([&](const Tensor& t) { return sum(exp(t)); }, a) <= 1e-6);
        CHECK(fd([&](const Tensor& t) { return sum(log(t)); }, b) <= 1e-6);
        CHECK(fd([&](const Tensor& t) { return sum(sqrt(t)); }, b) <= 1e-6);
        CHECK(fd([&](const Tensor& t) { return sum(arcsin(scalar_mul(t, real(0.5)))); }, a) <= 1e-6);
        CHECK(fd([&](const Tensor& t) { return mean(t); }, a) <= 1e-6);
        CHECK(fd([&](const Tensor& t) { return l2norm(t); }, a) <= 1e-6);
        CHECK(fd([&](const Tensor& t) { return sum(mul(reshape(t, Shape{6}), reshape(b, Shape{6}))); },
                 a) <= 1e-6);
        CHECK(fd([&](const Tensor& t) { return sum(slice(t, 1, 2)); }, v) <= 1e-6);
        CHECK(fd(
                  [&](const Tensor& t) {
                      const std::array<Tensor, 2> parts{t, b};
                      return sum(mul(concat(parts), concat(std::array<Tensor, 2>{b, b})));
                  },
                  a) <= 1e-6);
    }
}

TEST_CASE("linear layer finite differences") {
    Rng rng(7);
    Tensor w = random_tensor(Shape{3, 4}, rng);
    Tensor b = random_tensor(Shape{3}, rng);
    Tensor x = random_tensor(Shape{4, 2}, rng);

    CHECK(grad_check([&](const Tensor& t) { return sum(tanh(linear(t, b, x))); }, w, 1e-5) <= 1e-6);
    CHECK(grad_check([&](const Tensor& t) { return sum(tanh(linear(w, t, x))); }, b, 1e-5) <= 1e-6);
    CHECK(grad_check([&](const Tensor& t) { return sum(tanh(linear(w, b, t))); }, x, 1e-5) <= 1e-6);
}

TEST_CASE("crop_resize forward and gradient") {
    Rng rng(9);
    Tensor img = random_tensor(Shape{2, 8, 8}, rng);

    // full-image identity: box covering everything resized to its own size
    CropBox full{0, 0, 8, 8};
    Tensor same = crop_resize(img, full, 8, 8);
    for (std::size_t i = 0; i < img.numel(); ++i) {
        CHECK(double(same.at(i)) == doctest::Approx(double(img.at(i))).epsilon(1e-12));
    }

    CropBox box{1, 2, 5, 4};
    CHECK(grad_check(
              [&](const Tensor& t) { return sum(mul(crop_resize(t, box, 6, 6), crop_resize(img, box, 6, 6))); },
              img, 1e-5) <= 1e-6);
    CHECK_THROWS_AS(crop_resize(img, CropBox{5, 5, 6, 2}, 4, 4), contract_error);
}

TEST_CASE("apply_primitive dispatch matches named ops") {
    Tensor a(Shape{2}, {0.3, -0.2});
    Tensor b(Shape{2}, {0.1, 0.4});
    const std::array<Tensor, 2> two{a, b};
    CHECK(apply_primitive(Primitive::add, two).at(0) == doctest::Approx(0.4));
    CHECK(apply_primitive(Primitive::mul, two).at(1) == doctest::Approx(-0.08));
    const std::array<Tensor, 1> one{a};
    CHECK(double(apply_primitive(Primitive::sum, one).item()) == doctest::Approx(0.1));
    CHECK_THROWS_AS(apply_primitive(Primitive::matmul, one), contract_error);
}

TEST_CASE("determinism: same seed, bit-identical results") {
    auto run = [] {
        Rng rng(123);
        Tensor w = random_tensor(Shape{8, 8}, rng);
        Tensor x = random_tensor(Shape{8}, rng);
        x.set_requires_grad(true);
        backward(mean(tanh(matmul(w, x))));
        std::vector<real> out(x.grad().begin(), x.grad().end());
        return out;
    };
    auto a = run();
    auto b = run();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("no NaN/Inf from finite inputs") {
    Rng rng(5);
    Tensor a = random_tensor(Shape{4, 4}, rng, -3.0, 3.0);
    for (Tensor t : {tanh(a), silu(a), exp(a), matmul(a, a), mean(a), l2norm(a)}) {
        for (real v : t.data()) CHECK(std::isfinite(double(v)));
    }
}
