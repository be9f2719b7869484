// AVX2/FMA kernel variants. Compiled with -mavx2 -mfma; only reached after a
// runtime cpuid check. Element order and fma usage mirror the scalar
// reference exactly, so outputs are bit-identical.
#include "skipdet/kernels.hpp"

#ifdef SKIPDET_HAVE_AVX2_BUILD

#include <immintrin.h>

#include <cmath>

namespace skipdet::kern::detail {

void axpy_avx2(std::size_t n, float a, const float* x, float* y) {
    __m256 va = _mm256_set1_ps(a);
    std::size_t nv = n & ~std::size_t(7);
    for (std::size_t i = 0; i < nv; i += 8) {
        __m256 vy = _mm256_loadu_ps(y + i);
        vy = _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), vy);
        _mm256_storeu_ps(y + i, vy);
    }
    for (std::size_t i = nv; i < n; ++i) y[i] = std::fmaf(a, x[i], y[i]);
}

float dot_avx2(std::size_t n, const float* x, const float* y) {
    __m256 vacc = _mm256_setzero_ps();
    std::size_t nv = n & ~std::size_t(7);
    for (std::size_t i = 0; i < nv; i += 8)
        vacc = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), vacc);
    float acc[8];
    _mm256_storeu_ps(acc, vacc);
    float tail = 0.0f;
    for (std::size_t i = nv; i < n; ++i) tail = std::fmaf(x[i], y[i], tail);
    return reduce8(acc, tail);
}

void relu6_avx2(std::size_t n, const float* x, float* y) {
    __m256 lo = _mm256_setzero_ps();
    __m256 hi = _mm256_set1_ps(6.0f);
    std::size_t nv = n & ~std::size_t(7);
    for (std::size_t i = 0; i < nv; i += 8) {
        __m256 v = _mm256_loadu_ps(x + i);
        _mm256_storeu_ps(y + i, _mm256_min_ps(_mm256_max_ps(v, lo), hi));
    }
    for (std::size_t i = nv; i < n; ++i) {
        float v = x[i];
        v = v < 0.0f ? 0.0f : v;
        y[i] = v > 6.0f ? 6.0f : v;
    }
}

void affine_avx2(std::size_t n, float a, float b, const float* x, float* y) {
    __m256 va = _mm256_set1_ps(a);
    __m256 vb = _mm256_set1_ps(b);
    std::size_t nv = n & ~std::size_t(7);
    for (std::size_t i = 0; i < nv; i += 8)
        _mm256_storeu_ps(y + i, _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), vb));
    for (std::size_t i = nv; i < n; ++i) y[i] = std::fmaf(a, x[i], b);
}

void add_avx2(std::size_t n, const float* x, float* y) {
    std::size_t nv = n & ~std::size_t(7);
    for (std::size_t i = 0; i < nv; i += 8)
        _mm256_storeu_ps(y + i, _mm256_add_ps(_mm256_loadu_ps(y + i), _mm256_loadu_ps(x + i)));
    for (std::size_t i = nv; i < n; ++i) y[i] += x[i];
}

}  // namespace skipdet::kern::detail

#endif  // SKIPDET_HAVE_AVX2_BUILD
