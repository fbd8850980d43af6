#pragma once

#include <cstddef>

// Internal: AVX2 kernel variants, compiled only when the target
// architecture supports them (see src/CMakeLists.txt).

namespace swp::kernels::avx2 {

void axpy(float* y, const float* x, float a, size_t n);
float dot(const float* a, const float* b, size_t n);
float sum(const float* x, size_t n);
float sumsq_diff(const float* x, float mean, size_t n);
void scale_shift(float* dst, const float* src, float a, float b, size_t n);
void relu(float* dst, const float* src, size_t n);
void relu_backward(float* dst, const float* grad, const float* pre, size_t n);
void adam_update(float* w, const float* g, float* m, float* v, size_t n, float lr,
                 float beta1, float beta2, float eps, float inv_c1, float inv_c2, float l2);

} // namespace swp::kernels::avx2
