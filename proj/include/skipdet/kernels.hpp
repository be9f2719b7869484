#pragma once

#include <cstddef>
#include <string>

// Inner-loop arithmetic kernels. Each kernel has a scalar reference and an
// AVX2 variant selected at runtime; both use the same per-element operation
// order (fused multiply-add, 8-way striped reductions) so results are
// bit-identical across ISAs.
namespace skipdet::kern {

enum class Isa { Scalar, Avx2 };

Isa best_supported();
Isa active();
void set_active(Isa isa);
const char* isa_name(Isa isa);

// Optional multiply counter: while set, every axpy/dot call adds its element
// count (= number of multiplies) to *counter. Pass nullptr to disable. Used to
// cross-check the analytic cost model against an instrumented forward pass.
void set_mac_counter(unsigned long long* counter);

// y[i] += a * x[i]
void axpy(std::size_t n, float a, const float* x, float* y);

// sum_i x[i]*y[i], 8-accumulator striped order
float dot(std::size_t n, const float* x, const float* y);

// y[i] = min(max(x[i], 0), 6)
void relu6(std::size_t n, const float* x, float* y);

// y[i] = a*x[i] + b
void affine(std::size_t n, float a, float b, const float* x, float* y);

// y[i] += x[i]
void add(std::size_t n, const float* x, float* y);

namespace detail {

void axpy_scalar(std::size_t n, float a, const float* x, float* y);
float dot_scalar(std::size_t n, const float* x, const float* y);
void relu6_scalar(std::size_t n, const float* x, float* y);
void affine_scalar(std::size_t n, float a, float b, const float* x, float* y);
void add_scalar(std::size_t n, const float* x, float* y);

#if defined(__x86_64__) || defined(_M_X64)
#define SKIPDET_HAVE_AVX2_BUILD 1
void axpy_avx2(std::size_t n, float a, const float* x, float* y);
float dot_avx2(std::size_t n, const float* x, const float* y);
void relu6_avx2(std::size_t n, const float* x, float* y);
void affine_avx2(std::size_t n, float a, float b, const float* x, float* y);
void add_avx2(std::size_t n, const float* x, float* y);
#endif

// shared final reduction for the 8 stripe accumulators + tail sum
inline float reduce8(const float* acc, float tail) {
    float s01 = acc[0] + acc[1];
    float s23 = acc[2] + acc[3];
    float s45 = acc[4] + acc[5];
    float s67 = acc[6] + acc[7];
    return ((s01 + s23) + (s45 + s67)) + tail;
}

}  // namespace detail

}  // namespace skipdet::kern
