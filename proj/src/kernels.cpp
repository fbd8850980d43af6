#include "swp/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <cstring>

#ifdef SWP_HAVE_AVX2
#include "kernels_dispatch.hpp"
#endif

namespace swp::kernels {

bool avx2_supported() {
#ifdef SWP_HAVE_AVX2
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

namespace {

Backend pick_initial() {
    if (const char* env = std::getenv("SWP_KERNEL_BACKEND")) {
        if (std::strcmp(env, "scalar") == 0)
            return Backend::scalar;
        if (std::strcmp(env, "avx2") == 0 && avx2_supported())
            return Backend::avx2;
    }
    return avx2_supported() ? Backend::avx2 : Backend::scalar;
}

std::atomic<Backend> g_backend{pick_initial()};

} // namespace

Backend active() { return g_backend.load(std::memory_order_relaxed); }

void force(Backend b) {
    if (b == Backend::avx2 && !avx2_supported())
        b = Backend::scalar;
    g_backend.store(b, std::memory_order_relaxed);
}

const char* backend_name(Backend b) {
    return b == Backend::avx2 ? "avx2" : "scalar";
}

#ifdef SWP_HAVE_AVX2
#define SWP_DISPATCH(call_avx2, call_ref) \
    do { \
        if (active() == Backend::avx2) \
            return call_avx2; \
        return call_ref; \
    } while (0)
#else
#define SWP_DISPATCH(call_avx2, call_ref) return call_ref
#endif

template <>
void axpy<float>(float* y, const float* x, float a, size_t n) {
    SWP_DISPATCH(avx2::axpy(y, x, a, n), axpy_ref(y, x, a, n));
}

template <>
float dot<float>(const float* a, const float* b, size_t n) {
    SWP_DISPATCH(avx2::dot(a, b, n), dot_ref(a, b, n));
}

template <>
float sum<float>(const float* x, size_t n) {
    SWP_DISPATCH(avx2::sum(x, n), sum_ref(x, n));
}

template <>
float sumsq_diff<float>(const float* x, float mean, size_t n) {
    SWP_DISPATCH(avx2::sumsq_diff(x, mean, n), sumsq_diff_ref(x, mean, n));
}

template <>
void scale_shift<float>(float* dst, const float* src, float a, float b, size_t n) {
    SWP_DISPATCH(avx2::scale_shift(dst, src, a, b, n), scale_shift_ref(dst, src, a, b, n));
}

template <>
void relu<float>(float* dst, const float* src, size_t n) {
    SWP_DISPATCH(avx2::relu(dst, src, n), relu_ref(dst, src, n));
}

template <>
void relu_backward<float>(float* dst, const float* grad, const float* pre, size_t n) {
    SWP_DISPATCH(avx2::relu_backward(dst, grad, pre, n), relu_backward_ref(dst, grad, pre, n));
}

template <>
void adam_update<float>(float* w, const float* g, float* m, float* v, size_t n, float lr,
                        float beta1, float beta2, float eps, float inv_c1, float inv_c2,
                        float l2) {
    SWP_DISPATCH(avx2::adam_update(w, g, m, v, n, lr, beta1, beta2, eps, inv_c1, inv_c2, l2),
                 adam_update_ref(w, g, m, v, n, lr, beta1, beta2, eps, inv_c1, inv_c2, l2));
}

#undef SWP_DISPATCH

} // namespace swp::kernels
