#include "skipdet/kernels.hpp"

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <stdexcept>

namespace skipdet::kern {

namespace detail {

void axpy_scalar(std::size_t n, float a, const float* x, float* y) {
    for (std::size_t i = 0; i < n; ++i) y[i] = std::fmaf(a, x[i], y[i]);
}

float dot_scalar(std::size_t n, const float* x, const float* y) {
    float acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
    std::size_t nv = n & ~std::size_t(7);
    for (std::size_t i = 0; i < nv; i += 8)
        for (int j = 0; j < 8; ++j) acc[j] = std::fmaf(x[i + j], y[i + j], acc[j]);
    float tail = 0.0f;
    for (std::size_t i = nv; i < n; ++i) tail = std::fmaf(x[i], y[i], tail);
    return reduce8(acc, tail);
}

void relu6_scalar(std::size_t n, const float* x, float* y) {
    for (std::size_t i = 0; i < n; ++i) {
        float v = x[i];
        v = v < 0.0f ? 0.0f : v;
        y[i] = v > 6.0f ? 6.0f : v;
    }
}

void affine_scalar(std::size_t n, float a, float b, const float* x, float* y) {
    for (std::size_t i = 0; i < n; ++i) y[i] = std::fmaf(a, x[i], b);
}

void add_scalar(std::size_t n, const float* x, float* y) {
    for (std::size_t i = 0; i < n; ++i) y[i] += x[i];
}

}  // namespace detail

namespace {

struct Dispatch {
    void (*axpy)(std::size_t, float, const float*, float*);
    float (*dot)(std::size_t, const float*, const float*);
    void (*relu6)(std::size_t, const float*, float*);
    void (*affine)(std::size_t, float, float, const float*, float*);
    void (*add)(std::size_t, const float*, float*);
};

constexpr Dispatch kScalar{detail::axpy_scalar, detail::dot_scalar, detail::relu6_scalar,
                           detail::affine_scalar, detail::add_scalar};
#ifdef SKIPDET_HAVE_AVX2_BUILD
constexpr Dispatch kAvx2{detail::axpy_avx2, detail::dot_avx2, detail::relu6_avx2,
                         detail::affine_avx2, detail::add_avx2};
#endif

Isa pick_initial() {
    if (const char* env = std::getenv("SKIPDET_KERNELS")) {
        if (std::strcmp(env, "scalar") == 0) return Isa::Scalar;
        if (std::strcmp(env, "avx2") == 0) return Isa::Avx2;
    }
    return best_supported();
}

Isa g_isa = pick_initial();
const Dispatch* g_dispatch = nullptr;

const Dispatch* table_for(Isa isa) {
#ifdef SKIPDET_HAVE_AVX2_BUILD
    if (isa == Isa::Avx2) return &kAvx2;
#endif
    return &kScalar;
}

}  // namespace

Isa best_supported() {
#ifdef SKIPDET_HAVE_AVX2_BUILD
    if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma")) return Isa::Avx2;
#endif
    return Isa::Scalar;
}

Isa active() { return g_isa; }

void set_active(Isa isa) {
    if (isa == Isa::Avx2 && best_supported() != Isa::Avx2)
        throw std::runtime_error("kernels: AVX2 requested but not supported on this CPU");
    g_isa = isa;
    g_dispatch = table_for(isa);
}

const char* isa_name(Isa isa) { return isa == Isa::Avx2 ? "avx2" : "scalar"; }

namespace {
inline const Dispatch& disp() {
    if (!g_dispatch) g_dispatch = table_for(g_isa);
    return *g_dispatch;
}
}  // namespace

namespace {
unsigned long long* g_mac_counter = nullptr;
}

void set_mac_counter(unsigned long long* counter) { g_mac_counter = counter; }

void axpy(std::size_t n, float a, const float* x, float* y) {
    if (g_mac_counter) *g_mac_counter += n;
    disp().axpy(n, a, x, y);
}
float dot(std::size_t n, const float* x, const float* y) {
    if (g_mac_counter) *g_mac_counter += n;
    return disp().dot(n, x, y);
}
void relu6(std::size_t n, const float* x, float* y) { disp().relu6(n, x, y); }
void affine(std::size_t n, float a, float b, const float* x, float* y) { disp().affine(n, a, b, x, y); }
void add(std::size_t n, const float* x, float* y) { disp().add(n, x, y); }

}  // namespace skipdet::kern
