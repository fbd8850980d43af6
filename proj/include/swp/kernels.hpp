#pragma once

#include <cmath>
#include <cstddef>

namespace swp::kernels {

// The inner loops below carry nearly all of the arithmetic in the
// engine (convolution and dense layers reduce to gemm, batch norm and
// the optimizer to the elementwise/reduction primitives). Each has a
// scalar reference implementation, templated on the element type, and
// an AVX2 variant for float selected at runtime. The scalar template is
// the semantic reference; the equivalence tests compare the two paths.

enum class Backend { scalar, avx2 };

bool avx2_supported();

/// Currently active backend for the float entry points.
Backend active();

/// Override backend selection ("scalar" forces the reference path even
/// when AVX2 is available). Used by the equivalence tests and honored
/// from the SWP_KERNEL_BACKEND environment variable at startup.
void force(Backend b);

const char* backend_name(Backend b);

// ---- scalar reference implementations -------------------------------

template <typename T>
inline void axpy_ref(T* y, const T* x, T a, size_t n) {
    for (size_t i = 0; i < n; ++i)
        y[i] += a * x[i];
}

template <typename T>
inline T dot_ref(const T* a, const T* b, size_t n) {
    T acc = T(0);
    for (size_t i = 0; i < n; ++i)
        acc += a[i] * b[i];
    return acc;
}

template <typename T>
inline T sum_ref(const T* x, size_t n) {
    T acc = T(0);
    for (size_t i = 0; i < n; ++i)
        acc += x[i];
    return acc;
}

template <typename T>
inline T sumsq_diff_ref(const T* x, T mean, size_t n) {
    T acc = T(0);
    for (size_t i = 0; i < n; ++i) {
        T d = x[i] - mean;
        acc += d * d;
    }
    return acc;
}

template <typename T>
inline void scale_shift_ref(T* dst, const T* src, T a, T b, size_t n) {
    for (size_t i = 0; i < n; ++i)
        dst[i] = src[i] * a + b;
}

template <typename T>
inline void relu_ref(T* dst, const T* src, size_t n) {
    for (size_t i = 0; i < n; ++i)
        dst[i] = src[i] > T(0) ? src[i] : T(0);
}

template <typename T>
inline void relu_backward_ref(T* dst, const T* grad, const T* pre, size_t n) {
    for (size_t i = 0; i < n; ++i)
        dst[i] = pre[i] > T(0) ? grad[i] : T(0);
}

// Bias-corrected Adam step on one parameter tensor. l2 is added to the
// raw gradient before the moment updates. inv_c1/inv_c2 are the
// precomputed 1/(1-beta^t) corrections.
template <typename T>
inline void adam_update_ref(T* w, const T* g, T* m, T* v, size_t n, T lr, T beta1,
                            T beta2, T eps, T inv_c1, T inv_c2, T l2) {
    for (size_t i = 0; i < n; ++i) {
        T gi = g[i] + l2 * w[i];
        m[i] = beta1 * m[i] + (T(1) - beta1) * gi;
        v[i] = beta2 * v[i] + (T(1) - beta2) * gi * gi;
        T mhat = m[i] * inv_c1;
        T vhat = v[i] * inv_c2;
        w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

// ---- dispatched entry points -----------------------------------------
// Generic types always run the reference path; float specializations
// (kernels.cpp) route to AVX2 when selected.

template <typename T>
inline void axpy(T* y, const T* x, T a, size_t n) { axpy_ref(y, x, a, n); }
template <typename T>
inline T dot(const T* a, const T* b, size_t n) { return dot_ref(a, b, n); }
template <typename T>
inline T sum(const T* x, size_t n) { return sum_ref(x, n); }
template <typename T>
inline T sumsq_diff(const T* x, T mean, size_t n) { return sumsq_diff_ref(x, mean, n); }
template <typename T>
inline void scale_shift(T* dst, const T* src, T a, T b, size_t n) { scale_shift_ref(dst, src, a, b, n); }
template <typename T>
inline void relu(T* dst, const T* src, size_t n) { relu_ref(dst, src, n); }
template <typename T>
inline void relu_backward(T* dst, const T* grad, const T* pre, size_t n) { relu_backward_ref(dst, grad, pre, n); }
template <typename T>
inline void adam_update(T* w, const T* g, T* m, T* v, size_t n, T lr, T beta1, T beta2,
                        T eps, T inv_c1, T inv_c2, T l2) {
    adam_update_ref(w, g, m, v, n, lr, beta1, beta2, eps, inv_c1, inv_c2, l2);
}

template <> void axpy<float>(float* y, const float* x, float a, size_t n);
template <> float dot<float>(const float* a, const float* b, size_t n);
template <> float sum<float>(const float* x, size_t n);
template <> float sumsq_diff<float>(const float* x, float mean, size_t n);
template <> void scale_shift<float>(float* dst, const float* src, float a, float b, size_t n);
template <> void relu<float>(float* dst, const float* src, size_t n);
template <> void relu_backward<float>(float* dst, const float* grad, const float* pre, size_t n);
template <> void adam_update<float>(float* w, const float* g, float* m, float* v, size_t n,
                                    float lr, float beta1, float beta2, float eps,
                                    float inv_c1, float inv_c2, float l2);

// ---- gemm, layered on axpy/dot ---------------------------------------
// Row-major. accumulate=false overwrites C, true adds into it.

/// C(M,N) = A(M,K) * B(K,N)
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, size_t m, size_t k, size_t n, bool accumulate) {
    for (size_t i = 0; i < m; ++i) {
        T* crow = c + i * n;
        if (!accumulate)
            for (size_t j = 0; j < n; ++j)
                crow[j] = T(0);
        const T* arow = a + i * k;
        for (size_t p = 0; p < k; ++p)
            axpy<T>(crow, b + p * n, arow[p], n);
    }
}

/// C(M,N) = A(M,K) * B(N,K)^T
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, size_t m, size_t k, size_t n, bool accumulate) {
    for (size_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        T* crow = c + i * n;
        for (size_t j = 0; j < n; ++j) {
            T d = dot<T>(arow, b + j * k, k);
            crow[j] = accumulate ? crow[j] + d : d;
        }
    }
}

/// C(M,N) = A(K,M)^T * B(K,N)
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, size_t m, size_t k, size_t n, bool accumulate) {
    if (!accumulate)
        for (size_t i = 0; i < m * n; ++i)
            c[i] = T(0);
    for (size_t p = 0; p < k; ++p) {
        const T* arow = a + p * m;
        const T* brow = b + p * n;
        for (size_t i = 0; i < m; ++i)
            axpy<T>(c + i * n, brow, arow[i], n);
    }
}

} // namespace swp::kernels
