#include "kernels_dispatch.hpp"

#include <cmath>
#include <immintrin.h>

namespace swp::kernels::avx2 {

namespace {

inline float hsum(__m256 v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    lo = _mm_add_ps(lo, _mm_movehl_ps(lo, lo));
    lo = _mm_add_ss(lo, _mm_shuffle_ps(lo, lo, 1));
    return _mm_cvtss_f32(lo);
}

} // namespace

void axpy(float* y, const float* x, float a, size_t n) {
    __m256 va = _mm256_set1_ps(a);
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 vy = _mm256_loadu_ps(y + i);
        vy = _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), vy);
        _mm256_storeu_ps(y + i, vy);
    }
    for (; i < n; ++i)
        y[i] += a * x[i];
}

float dot(const float* a, const float* b, size_t n) {
    __m256 acc0 = _mm256_setzero_ps();
    __m256 acc1 = _mm256_setzero_ps();
    size_t i = 0;
    for (; i + 16 <= n; i += 16) {
        acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc0);
        acc1 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i + 8), _mm256_loadu_ps(b + i + 8), acc1);
    }
    for (; i + 8 <= n; i += 8)
        acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc0);
    float s = hsum(_mm256_add_ps(acc0, acc1));
    for (; i < n; ++i)
        s += a[i] * b[i];
    return s;
}

float sum(const float* x, size_t n) {
    __m256 acc = _mm256_setzero_ps();
    size_t i = 0;
    for (; i + 8 <= n; i += 8)
        acc = _mm256_add_ps(acc, _mm256_loadu_ps(x + i));
    float s = hsum(acc);
    for (; i < n; ++i)
        s += x[i];
    return s;
}

float sumsq_diff(const float* x, float mean, size_t n) {
    __m256 vm = _mm256_set1_ps(mean);
    __m256 acc = _mm256_setzero_ps();
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 d = _mm256_sub_ps(_mm256_loadu_ps(x + i), vm);
        acc = _mm256_fmadd_ps(d, d, acc);
    }
    float s = hsum(acc);
    for (; i < n; ++i) {
        float d = x[i] - mean;
        s += d * d;
    }
    return s;
}

void scale_shift(float* dst, const float* src, float a, float b, size_t n) {
    __m256 va = _mm256_set1_ps(a);
    __m256 vb = _mm256_set1_ps(b);
    size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(dst + i, _mm256_fmadd_ps(_mm256_loadu_ps(src + i), va, vb));
    for (; i < n; ++i)
        dst[i] = src[i] * a + b;
}

void relu(float* dst, const float* src, size_t n) {
    __m256 zero = _mm256_setzero_ps();
    size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(dst + i, _mm256_max_ps(_mm256_loadu_ps(src + i), zero));
    for (; i < n; ++i)
        dst[i] = src[i] > 0.0f ? src[i] : 0.0f;
}

void relu_backward(float* dst, const float* grad, const float* pre, size_t n) {
    __m256 zero = _mm256_setzero_ps();
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 mask = _mm256_cmp_ps(_mm256_loadu_ps(pre + i), zero, _CMP_GT_OQ);
        _mm256_storeu_ps(dst + i, _mm256_and_ps(_mm256_loadu_ps(grad + i), mask));
    }
    for (; i < n; ++i)
        dst[i] = pre[i] > 0.0f ? grad[i] : 0.0f;
}

void adam_update(float* w, const float* g, float* m, float* v, size_t n, float lr,
                 float beta1, float beta2, float eps, float inv_c1, float inv_c2, float l2) {
    __m256 vb1 = _mm256_set1_ps(beta1);
    __m256 vb2 = _mm256_set1_ps(beta2);
    __m256 vo1 = _mm256_set1_ps(1.0f - beta1);
    __m256 vo2 = _mm256_set1_ps(1.0f - beta2);
    __m256 vlr = _mm256_set1_ps(lr);
    __m256 veps = _mm256_set1_ps(eps);
    __m256 vc1 = _mm256_set1_ps(inv_c1);
    __m256 vc2 = _mm256_set1_ps(inv_c2);
    __m256 vl2 = _mm256_set1_ps(l2);
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 vw = _mm256_loadu_ps(w + i);
        __m256 vg = _mm256_fmadd_ps(vl2, vw, _mm256_loadu_ps(g + i));
        __m256 vm = _mm256_fmadd_ps(vo1, vg, _mm256_mul_ps(vb1, _mm256_loadu_ps(m + i)));
        __m256 vv = _mm256_fmadd_ps(vo2, _mm256_mul_ps(vg, vg),
                                    _mm256_mul_ps(vb2, _mm256_loadu_ps(v + i)));
        _mm256_storeu_ps(m + i, vm);
        _mm256_storeu_ps(v + i, vv);
        __m256 mhat = _mm256_mul_ps(vm, vc1);
        __m256 denom = _mm256_add_ps(_mm256_sqrt_ps(_mm256_mul_ps(vv, vc2)), veps);
        vw = _mm256_sub_ps(vw, _mm256_div_ps(_mm256_mul_ps(vlr, mhat), denom));
        _mm256_storeu_ps(w + i, vw);
    }
    for (; i < n; ++i) {
        float gi = g[i] + l2 * w[i];
        m[i] = beta1 * m[i] + (1.0f - beta1) * gi;
        v[i] = beta2 * v[i] + (1.0f - beta2) * gi * gi;
        w[i] -= lr * (m[i] * inv_c1) / (std::sqrt(v[i] * inv_c2) + eps);
    }
}

} // namespace swp::kernels::avx2
