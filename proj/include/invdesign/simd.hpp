#pragma once

// Eight doubles with a fused multiply-add. fma is correctly rounded on every
// backend, so results do not depend on which one is compiled in.

#include <cmath>

#if defined(__AVX512F__)
#include <immintrin.h>
#define INVDESIGN_SIMD_AVX512 1
#elif defined(__AVX2__) && defined(__FMA__)
#include <immintrin.h>
#define INVDESIGN_SIMD_AVX2 1
#endif

namespace invdesign::simd {

#if defined(INVDESIGN_SIMD_AVX512)

struct Vec8 {
    __m512d v;
    static Vec8 zero() { return {_mm512_setzero_pd()}; }
    static Vec8 broadcast(double x) { return {_mm512_set1_pd(x)}; }
    static Vec8 load(const double* p) { return {_mm512_loadu_pd(p)}; }
    void store(double* p) const { _mm512_storeu_pd(p, v); }
};
inline Vec8 fma(Vec8 a, Vec8 b, Vec8 c) { return {_mm512_fmadd_pd(a.v, b.v, c.v)}; }

#elif defined(INVDESIGN_SIMD_AVX2)

struct Vec8 {
    __m256d lo, hi;
    static Vec8 zero() { return {_mm256_setzero_pd(), _mm256_setzero_pd()}; }
    static Vec8 broadcast(double x) { return {_mm256_set1_pd(x), _mm256_set1_pd(x)}; }
    static Vec8 load(const double* p) { return {_mm256_loadu_pd(p), _mm256_loadu_pd(p + 4)}; }
    void store(double* p) const {
        _mm256_storeu_pd(p, lo);
        _mm256_storeu_pd(p + 4, hi);
    }
};
inline Vec8 fma(Vec8 a, Vec8 b, Vec8 c) {
    return {_mm256_fmadd_pd(a.lo, b.lo, c.lo), _mm256_fmadd_pd(a.hi, b.hi, c.hi)};
}

#else

struct Vec8 {
    double v[8];
    static Vec8 zero() { return broadcast(0.0); }
    static Vec8 broadcast(double x) {
        Vec8 r;
        for (double& e : r.v) e = x;
        return r;
    }
    static Vec8 load(const double* p) {
        Vec8 r;
        for (int i = 0; i < 8; ++i) r.v[i] = p[i];
        return r;
    }
    void store(double* p) const {
        for (int i = 0; i < 8; ++i) p[i] = v[i];
    }
};
inline Vec8 fma(Vec8 a, Vec8 b, Vec8 c) {
    Vec8 r;
    for (int i = 0; i < 8; ++i) r.v[i] = std::fma(a.v[i], b.v[i], c.v[i]);
    return r;
}

#endif

}  // namespace invdesign::simd
