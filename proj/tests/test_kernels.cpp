#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <vector>

#include "skipdet/kernels.hpp"
#include "skipdet/rng.hpp"

using namespace skipdet;

namespace {

std::vector<float> random_vec(std::size_t n, Rng& rng) {
    std::vector<float> v(n);
    for (auto& x : v) x = float(rng.uniform(-3.0, 3.0));
    return v;
}

}  // namespace

TEST_CASE("isa selection") {
    CHECK(kern::best_supported() == kern::active());
    kern::set_active(kern::Isa::Scalar);
    CHECK(kern::active() == kern::Isa::Scalar);
    kern::set_active(kern::best_supported());
}

#ifdef SKIPDET_HAVE_AVX2_BUILD
TEST_CASE("avx2 variants bit-equal scalar references") {
    if (kern::best_supported() != kern::Isa::Avx2) return;
    Rng rng(42);
    // cover vector-body + tail lengths
    for (std::size_t n : {0u, 1u, 7u, 8u, 9u, 64u, 100u, 1023u}) {
        auto x = random_vec(n, rng);
        auto y0 = random_vec(n, rng);
        float a = float(rng.uniform(-2.0, 2.0));

        auto y1 = y0;
        auto y2 = y0;
        kern::detail::axpy_scalar(n, a, x.data(), y1.data());
        kern::detail::axpy_avx2(n, a, x.data(), y2.data());
        CHECK(std::memcmp(y1.data(), y2.data(), n * sizeof(float)) == 0);

        float d1 = kern::detail::dot_scalar(n, x.data(), y0.data());
        float d2 = kern::detail::dot_avx2(n, x.data(), y0.data());
        CHECK(std::memcmp(&d1, &d2, sizeof(float)) == 0);

        std::vector<float> r1(n), r2(n);
        kern::detail::relu6_scalar(n, x.data(), r1.data());
        kern::detail::relu6_avx2(n, x.data(), r2.data());
        CHECK(std::memcmp(r1.data(), r2.data(), n * sizeof(float)) == 0);

        kern::detail::affine_scalar(n, a, 0.5f, x.data(), r1.data());
        kern::detail::affine_avx2(n, a, 0.5f, x.data(), r2.data());
        CHECK(std::memcmp(r1.data(), r2.data(), n * sizeof(float)) == 0);

        auto s1 = y0, s2 = y0;
        kern::detail::add_scalar(n, x.data(), s1.data());
        kern::detail::add_avx2(n, x.data(), s2.data());
        CHECK(std::memcmp(s1.data(), s2.data(), n * sizeof(float)) == 0);
    }
}
#endif

TEST_CASE("dot striping matches plain sum within fp tolerance") {
    Rng rng(7);
    auto x = random_vec(533, rng);
    auto y = random_vec(533, rng);
    double ref = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) ref += double(x[i]) * y[i];
    CHECK(kern::dot(x.size(), x.data(), y.data()) == doctest::Approx(ref).epsilon(1e-4));
}

TEST_CASE("relu6 clamps") {
    float in[3] = {-1.0f, 3.0f, 7.0f};
    float out[3];
    kern::relu6(3, in, out);
    CHECK(out[0] == 0.0f);
    CHECK(out[1] == 3.0f);
    CHECK(out[2] == 6.0f);
}
