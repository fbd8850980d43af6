#include "swp/ops.hpp"

#include <algorithm>
#include <cmath>

#include "swp/kernels.hpp"

namespace swp::ops {

namespace {

template <typename T>
void check_rank(const TensorT<T>& t, size_t rank, const char* who) {
    if (t.rank() != rank)
        throw ShapeError(std::string(who) + ": expected rank " + std::to_string(rank) +
                         ", got " + t.dims_str());
}

// Unpacks one image (C,H,W) into a (C*9, H*W) matrix so the 3x3
// convolution becomes a single gemm. Zero padding of width 1.
template <typename T>
void im2col3x3(const T* img, int64_t ch, int64_t h, int64_t w, T* col) {
    const int64_t plane = h * w;
    for (int64_t c = 0; c < ch; ++c) {
        const T* src = img + c * plane;
        for (int64_t kh = 0; kh < 3; ++kh) {
            for (int64_t kw = 0; kw < 3; ++kw) {
                T* row = col + ((c * 3 + kh) * 3 + kw) * plane;
                const int64_t x0 = std::max<int64_t>(0, 1 - kw);
                const int64_t x1 = std::min<int64_t>(w, w + 1 - kw);
                for (int64_t y = 0; y < h; ++y) {
                    T* dst = row + y * w;
                    const int64_t sy = y + kh - 1;
                    if (sy < 0 || sy >= h) {
                        std::fill(dst, dst + w, T(0));
                        continue;
                    }
                    std::fill(dst, dst + x0, T(0));
                    std::copy(src + sy * w + x0 + kw - 1, src + sy * w + x1 + kw - 1, dst + x0);
                    std::fill(dst + x1, dst + w, T(0));
                }
            }
        }
    }
}

// Scatter-add inverse of im2col3x3.
template <typename T>
void col2im3x3(const T* col, int64_t ch, int64_t h, int64_t w, T* img) {
    const int64_t plane = h * w;
    std::fill(img, img + ch * plane, T(0));
    for (int64_t c = 0; c < ch; ++c) {
        T* dst_plane = img + c * plane;
        for (int64_t kh = 0; kh < 3; ++kh) {
            for (int64_t kw = 0; kw < 3; ++kw) {
                const T* row = col + ((c * 3 + kh) * 3 + kw) * plane;
                const int64_t x0 = std::max<int64_t>(0, 1 - kw);
                const int64_t x1 = std::min<int64_t>(w, w + 1 - kw);
                for (int64_t y = 0; y < h; ++y) {
                    const int64_t sy = y + kh - 1;
                    if (sy < 0 || sy >= h || x1 <= x0)
                        continue;
                    kernels::axpy<T>(dst_plane + sy * w + x0 + kw - 1, row + y * w + x0, T(1),
                                     static_cast<size_t>(x1 - x0));
                }
            }
        }
    }
}

template <typename T>
void check_conv_shapes(const TensorT<T>& input, const TensorT<T>& kernel,
                       const TensorT<T>* bias) {
    check_rank(input, 4, "conv3x3");
    check_rank(kernel, 4, "conv3x3 kernel");
    if (kernel.dim(2) != 3 || kernel.dim(3) != 3)
        throw ShapeError("conv3x3: kernel spatial dims must be 3x3, got " + kernel.dims_str());
    if (input.dim(1) != kernel.dim(1))
        throw ShapeError("conv3x3: input has " + std::to_string(input.dim(1)) +
                         " channels but kernel expects " + std::to_string(kernel.dim(1)));
    if (bias && (bias->rank() != 1 || bias->dim(0) != kernel.dim(0)))
        throw ShapeError("conv3x3: bias length must equal output channels");
}

} // namespace

template <typename T>
TensorT<T> conv2d_forward(const TensorT<T>& input, const TensorT<T>& kernel,
                          const TensorT<T>& bias) {
    check_conv_shapes(input, kernel, &bias);
    const int64_t n = input.dim(0), ic = input.dim(1), h = input.dim(2), w = input.dim(3);
    const int64_t oc = kernel.dim(0);
    const int64_t plane = h * w;
    TensorT<T> out({n, oc, h, w});
    std::vector<T> col(static_cast<size_t>(ic * 9 * plane));
    for (int64_t i = 0; i < n; ++i) {
        im2col3x3(input.data() + i * ic * plane, ic, h, w, col.data());
        T* omat = out.data() + i * oc * plane;
        for (int64_t c = 0; c < oc; ++c)
            std::fill(omat + c * plane, omat + (c + 1) * plane, bias[c]);
        kernels::gemm_nn<T>(kernel.data(), col.data(), omat, static_cast<size_t>(oc),
                            static_cast<size_t>(ic * 9), static_cast<size_t>(plane), true);
    }
    return out;
}

template <typename T>
ConvGrads<T> conv2d_backward(const TensorT<T>& input, const TensorT<T>& kernel,
                             const TensorT<T>& grad_out) {
    check_conv_shapes(input, kernel, static_cast<const TensorT<T>*>(nullptr));
    const int64_t n = input.dim(0), ic = input.dim(1), h = input.dim(2), w = input.dim(3);
    const int64_t oc = kernel.dim(0);
    if (grad_out.dims() != std::vector<int64_t>{n, oc, h, w})
        throw ShapeError("conv3x3 backward: grad_out dims " + grad_out.dims_str() +
                         " do not match forward output");
    const int64_t plane = h * w;
    ConvGrads<T> g{TensorT<T>(input.dims()), TensorT<T>(kernel.dims()), TensorT<T>({oc})};
    std::vector<T> col(static_cast<size_t>(ic * 9 * plane));
    std::vector<T> gcol(static_cast<size_t>(ic * 9 * plane));
    for (int64_t i = 0; i < n; ++i) {
        const T* gmat = grad_out.data() + i * oc * plane;
        for (int64_t c = 0; c < oc; ++c)
            g.bias[c] += kernels::sum<T>(gmat + c * plane, static_cast<size_t>(plane));
        im2col3x3(input.data() + i * ic * plane, ic, h, w, col.data());
        kernels::gemm_nt<T>(gmat, col.data(), g.kernel.data(), static_cast<size_t>(oc),
                            static_cast<size_t>(plane), static_cast<size_t>(ic * 9), true);
        kernels::gemm_tn<T>(kernel.data(), gmat, gcol.data(), static_cast<size_t>(ic * 9),
                            static_cast<size_t>(oc), static_cast<size_t>(plane), false);
        col2im3x3(gcol.data(), ic, h, w, g.input.data() + i * ic * plane);
    }
    return g;
}

template <typename T>
TensorT<T> batchnorm_forward(const TensorT<T>& input, const TensorT<T>& gamma,
                             const TensorT<T>& beta, TensorT<T>& moving_mean,
                             TensorT<T>& moving_var, T epsilon, T momentum, bool train,
                             TensorT<T>* batch_mean_out, TensorT<T>* batch_var_out) {
    check_rank(input, 4, "batchnorm");
    const int64_t n = input.dim(0), ch = input.dim(1), h = input.dim(2), w = input.dim(3);
    for (const TensorT<T>* p : {&gamma, &beta, &moving_mean, &moving_var})
        if (p->numel() != ch)
            throw ShapeError("batchnorm: per-channel parameter length " +
                             std::to_string(p->numel()) + " does not match " +
                             std::to_string(ch) + " channels");
    const int64_t plane = h * w;
    const T m = static_cast<T>(n * plane);

    TensorT<T> mean({ch}), var({ch});
    if (train) {
        for (int64_t c = 0; c < ch; ++c) {
            T s = T(0);
            for (int64_t i = 0; i < n; ++i)
                s += kernels::sum<T>(input.data() + (i * ch + c) * plane,
                                     static_cast<size_t>(plane));
            mean[c] = s / m;
            T sq = T(0);
            for (int64_t i = 0; i < n; ++i)
                sq += kernels::sumsq_diff<T>(input.data() + (i * ch + c) * plane, mean[c],
                                             static_cast<size_t>(plane));
            var[c] = sq / m;
            moving_mean[c] = momentum * moving_mean[c] + (T(1) - momentum) * mean[c];
            moving_var[c] = momentum * moving_var[c] + (T(1) - momentum) * var[c];
        }
    } else {
        mean = moving_mean;
        var = moving_var;
    }
    if (batch_mean_out) *batch_mean_out = mean;
    if (batch_var_out) *batch_var_out = var;

    TensorT<T> out(input.dims());
    for (int64_t c = 0; c < ch; ++c) {
        const T a = gamma[c] / std::sqrt(var[c] + epsilon);
        const T b = beta[c] - mean[c] * a;
        for (int64_t i = 0; i < n; ++i)
            kernels::scale_shift<T>(out.data() + (i * ch + c) * plane,
                                    input.data() + (i * ch + c) * plane, a, b,
                                    static_cast<size_t>(plane));
    }
    return out;
}

template <typename T>
BatchNormGrads<T> batchnorm_backward(const TensorT<T>& input, const TensorT<T>& gamma,
                                     const TensorT<T>& batch_mean,
                                     const TensorT<T>& batch_var, T epsilon,
                                     const TensorT<T>& grad_out) {
    check_rank(input, 4, "batchnorm backward");
    if (!grad_out.same_dims(input))
        throw ShapeError("batchnorm backward: grad_out dims do not match input");
    const int64_t n = input.dim(0), ch = input.dim(1), plane = input.dim(2) * input.dim(3);
    const T m = static_cast<T>(n * plane);
    BatchNormGrads<T> g{TensorT<T>(input.dims()), TensorT<T>({ch}), TensorT<T>({ch})};
    std::vector<T> xhat(static_cast<size_t>(plane));
    for (int64_t c = 0; c < ch; ++c) {
        const T invstd = T(1) / std::sqrt(batch_var[c] + epsilon);
        const T shift = -batch_mean[c] * invstd;
        T s1 = T(0), s2 = T(0);
        for (int64_t i = 0; i < n; ++i) {
            const T* x = input.data() + (i * ch + c) * plane;
            const T* dy = grad_out.data() + (i * ch + c) * plane;
            s1 += kernels::sum<T>(dy, static_cast<size_t>(plane));
            kernels::scale_shift<T>(xhat.data(), x, invstd, shift, static_cast<size_t>(plane));
            s2 += kernels::dot<T>(dy, xhat.data(), static_cast<size_t>(plane));
        }
        g.beta[c] = s1;
        g.gamma[c] = s2;
        // dx = g*invstd * (dy - s1/m - xhat * s2/m)
        const T a = gamma[c] * invstd;
        const T cshift = -a * s1 / m;
        const T bcoef = -a * s2 / m;
        for (int64_t i = 0; i < n; ++i) {
            const T* x = input.data() + (i * ch + c) * plane;
            const T* dy = grad_out.data() + (i * ch + c) * plane;
            T* dx = g.input.data() + (i * ch + c) * plane;
            kernels::scale_shift<T>(xhat.data(), x, invstd, shift, static_cast<size_t>(plane));
            kernels::scale_shift<T>(dx, dy, a, cshift, static_cast<size_t>(plane));
            kernels::axpy<T>(dx, xhat.data(), bcoef, static_cast<size_t>(plane));
        }
    }
    return g;
}

template <typename T>
TensorT<T> relu_forward(const TensorT<T>& input) {
    TensorT<T> out(input.dims());
    kernels::relu<T>(out.data(), input.data(), static_cast<size_t>(input.numel()));
    return out;
}

template <typename T>
TensorT<T> relu_backward(const TensorT<T>& input, const TensorT<T>& grad_out) {
    if (!grad_out.same_dims(input))
        throw ShapeError("relu backward: grad_out dims do not match input");
    TensorT<T> g(input.dims());
    kernels::relu_backward<T>(g.data(), grad_out.data(), input.data(),
                              static_cast<size_t>(input.numel()));
    return g;
}

namespace {

template <typename T>
void check_pool_input(const TensorT<T>& input, const char* who) {
    check_rank(input, 4, who);
    if (input.dim(2) < 2 || input.dim(3) < 2)
        throw ShapeError(std::string(who) + ": spatial extent must be >= 2, got " +
                         input.dims_str());
}

} // namespace

template <typename T>
TensorT<T> max_pool2_forward(const TensorT<T>& input) {
    check_pool_input(input, "max_pool2");
    const int64_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    const int64_t oh = h / 2, ow = w / 2;
    TensorT<T> out({n, c, oh, ow});
    for (int64_t p = 0; p < n * c; ++p) {
        const T* src = input.data() + p * h * w;
        T* dst = out.data() + p * oh * ow;
        for (int64_t y = 0; y < oh; ++y) {
            const T* r0 = src + 2 * y * w;
            const T* r1 = r0 + w;
            for (int64_t x = 0; x < ow; ++x)
                dst[y * ow + x] = std::max(std::max(r0[2 * x], r0[2 * x + 1]),
                                           std::max(r1[2 * x], r1[2 * x + 1]));
        }
    }
    return out;
}

template <typename T>
TensorT<T> max_pool2_backward(const TensorT<T>& input, const TensorT<T>& grad_out) {
    check_pool_input(input, "max_pool2 backward");
    const int64_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    const int64_t oh = h / 2, ow = w / 2;
    if (grad_out.dims() != std::vector<int64_t>{n, c, oh, ow})
        throw ShapeError("max_pool2 backward: grad_out dims do not match pooled output");
    TensorT<T> g(input.dims());
    for (int64_t p = 0; p < n * c; ++p) {
        const T* src = input.data() + p * h * w;
        const T* go = grad_out.data() + p * oh * ow;
        T* dst = g.data() + p * h * w;
        for (int64_t y = 0; y < oh; ++y) {
            for (int64_t x = 0; x < ow; ++x) {
                // ties resolve to the first maximum in scan order
                int64_t best = 2 * y * w + 2 * x;
                const int64_t cand[3] = {best + 1, best + w, best + w + 1};
                for (int64_t k : cand)
                    if (src[k] > src[best]) best = k;
                dst[best] += go[y * ow + x];
            }
        }
    }
    return g;
}

template <typename T>
TensorT<T> avg_pool2_forward(const TensorT<T>& input) {
    check_pool_input(input, "avg_pool2");
    const int64_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    const int64_t oh = h / 2, ow = w / 2;
    TensorT<T> out({n, c, oh, ow});
    for (int64_t p = 0; p < n * c; ++p) {
        const T* src = input.data() + p * h * w;
        T* dst = out.data() + p * oh * ow;
        for (int64_t y = 0; y < oh; ++y) {
            const T* r0 = src + 2 * y * w;
            const T* r1 = r0 + w;
            for (int64_t x = 0; x < ow; ++x)
                dst[y * ow + x] = (r0[2 * x] + r0[2 * x + 1] + r1[2 * x] + r1[2 * x + 1]) / T(4);
        }
    }
    return out;
}

template <typename T>
TensorT<T> avg_pool2_backward(const TensorT<T>& input, const TensorT<T>& grad_out) {
    check_pool_input(input, "avg_pool2 backward");
    const int64_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    const int64_t oh = h / 2, ow = w / 2;
    if (grad_out.dims() != std::vector<int64_t>{n, c, oh, ow})
        throw ShapeError("avg_pool2 backward: grad_out dims do not match pooled output");
    TensorT<T> g(input.dims());
    for (int64_t p = 0; p < n * c; ++p) {
        const T* go = grad_out.data() + p * oh * ow;
        T* dst = g.data() + p * h * w;
        for (int64_t y = 0; y < oh; ++y) {
            for (int64_t x = 0; x < ow; ++x) {
                const T v = go[y * ow + x] / T(4);
                dst[2 * y * w + 2 * x] += v;
                dst[2 * y * w + 2 * x + 1] += v;
                dst[(2 * y + 1) * w + 2 * x] += v;
                dst[(2 * y + 1) * w + 2 * x + 1] += v;
            }
        }
    }
    return g;
}

template <typename T>
TensorT<T> dense_forward(const TensorT<T>& input, const TensorT<T>& weight,
                         const TensorT<T>& bias) {
    check_rank(input, 2, "dense");
    check_rank(weight, 2, "dense weight");
    if (weight.dim(1) != input.dim(1))
        throw ShapeError("dense: input length " + std::to_string(input.dim(1)) +
                         " does not match weight inner dim " + std::to_string(weight.dim(1)));
    const int64_t n = input.dim(0), k = input.dim(1), units = weight.dim(0);
    if (bias.numel() != units)
        throw ShapeError("dense: bias length must equal units");
    TensorT<T> out({n, units});
    kernels::gemm_nt<T>(input.data(), weight.data(), out.data(), static_cast<size_t>(n),
                        static_cast<size_t>(k), static_cast<size_t>(units), false);
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < units; ++j)
            out.at2(i, j) += bias[j];
    return out;
}

template <typename T>
DenseGrads<T> dense_backward(const TensorT<T>& input, const TensorT<T>& weight,
                             const TensorT<T>& grad_out) {
    const int64_t n = input.dim(0), k = input.dim(1), units = weight.dim(0);
    if (grad_out.dims() != std::vector<int64_t>{n, units})
        throw ShapeError("dense backward: grad_out dims do not match output");
    DenseGrads<T> g{TensorT<T>(input.dims()), TensorT<T>(weight.dims()), TensorT<T>({units})};
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < units; ++j)
            g.bias[j] += grad_out.at2(i, j);
    kernels::gemm_tn<T>(grad_out.data(), input.data(), g.weight.data(),
                        static_cast<size_t>(units), static_cast<size_t>(n),
                        static_cast<size_t>(k), false);
    kernels::gemm_nn<T>(grad_out.data(), weight.data(), g.input.data(), static_cast<size_t>(n),
                        static_cast<size_t>(units), static_cast<size_t>(k), false);
    return g;
}

template <typename T>
TensorT<T> softmax_forward(const TensorT<T>& logits) {
    check_rank(logits, 2, "softmax");
    const int64_t n = logits.dim(0), k = logits.dim(1);
    TensorT<T> out(logits.dims());
    for (int64_t i = 0; i < n; ++i) {
        const T* row = logits.data() + i * k;
        T* orow = out.data() + i * k;
        T mx = row[0];
        for (int64_t j = 1; j < k; ++j)
            mx = std::max(mx, row[j]);
        T total = T(0);
        for (int64_t j = 0; j < k; ++j) {
            orow[j] = std::exp(row[j] - mx);
            total += orow[j];
        }
        for (int64_t j = 0; j < k; ++j)
            orow[j] /= total;
    }
    return out;
}

template <typename T>
TensorT<T> softmax_backward(const TensorT<T>& output, const TensorT<T>& grad_out) {
    if (!grad_out.same_dims(output))
        throw ShapeError("softmax backward: grad_out dims do not match output");
    const int64_t n = output.dim(0), k = output.dim(1);
    TensorT<T> g(output.dims());
    for (int64_t i = 0; i < n; ++i) {
        const T* y = output.data() + i * k;
        const T* dy = grad_out.data() + i * k;
        const T s = kernels::dot<T>(y, dy, static_cast<size_t>(k));
        for (int64_t j = 0; j < k; ++j)
            g.data()[i * k + j] = y[j] * (dy[j] - s);
    }
    return g;
}

template <typename T>
std::pair<TensorT<T>, TensorT<T>> dropout_forward(const TensorT<T>& input, T rate, bool train,
                                                  std::mt19937& rng) {
    if (rate < T(0) || rate >= T(1))
        throw Error("dropout: rate must be in [0,1), got " + std::to_string(rate));
    if (!train || rate == T(0))
        return {input, TensorT<T>::full(input.dims(), T(1))};
    TensorT<T> out(input.dims());
    TensorT<T> mask(input.dims());
    const T keep_scale = T(1) / (T(1) - rate);
    for (int64_t i = 0; i < input.numel(); ++i) {
        const T u = static_cast<T>(rng() >> 8) * static_cast<T>(1.0 / 16777216.0);
        const T mv = u < rate ? T(0) : keep_scale;
        mask[i] = mv;
        out[i] = input[i] * mv;
    }
    return {std::move(out), std::move(mask)};
}

template <typename T>
TensorT<T> dropout_backward(const TensorT<T>& mask, const TensorT<T>& grad_out) {
    if (!grad_out.same_dims(mask))
        throw ShapeError("dropout backward: grad_out dims do not match mask");
    TensorT<T> g(mask.dims());
    for (int64_t i = 0; i < mask.numel(); ++i)
        g[i] = grad_out[i] * mask[i];
    return g;
}

#define SWP_INSTANTIATE_OPS(T)                                                                 \
    template TensorT<T> conv2d_forward<T>(const TensorT<T>&, const TensorT<T>&,               \
                                          const TensorT<T>&);                                 \
    template ConvGrads<T> conv2d_backward<T>(const TensorT<T>&, const TensorT<T>&,            \
                                             const TensorT<T>&);                              \
    template TensorT<T> batchnorm_forward<T>(const TensorT<T>&, const TensorT<T>&,            \
                                             const TensorT<T>&, TensorT<T>&, TensorT<T>&, T,  \
                                             T, bool, TensorT<T>*, TensorT<T>*);              \
    template BatchNormGrads<T> batchnorm_backward<T>(const TensorT<T>&, const TensorT<T>&,    \
                                                     const TensorT<T>&, const TensorT<T>&, T, \
                                                     const TensorT<T>&);                      \
    template TensorT<T> relu_forward<T>(const TensorT<T>&);                                   \
    template TensorT<T> relu_backward<T>(const TensorT<T>&, const TensorT<T>&);               \
    template TensorT<T> max_pool2_forward<T>(const TensorT<T>&);                              \
    template TensorT<T> max_pool2_backward<T>(const TensorT<T>&, const TensorT<T>&);          \
    template TensorT<T> avg_pool2_forward<T>(const TensorT<T>&);                              \
    template TensorT<T> avg_pool2_backward<T>(const TensorT<T>&, const TensorT<T>&);          \
    template TensorT<T> dense_forward<T>(const TensorT<T>&, const TensorT<T>&,                \
                                         const TensorT<T>&);                                  \
    template DenseGrads<T> dense_backward<T>(const TensorT<T>&, const TensorT<T>&,            \
                                             const TensorT<T>&);                              \
    template TensorT<T> softmax_forward<T>(const TensorT<T>&);                                \
    template TensorT<T> softmax_backward<T>(const TensorT<T>&, const TensorT<T>&);            \
    template std::pair<TensorT<T>, TensorT<T>> dropout_forward<T>(const TensorT<T>&, T, bool, \
                                                                  std::mt19937&);             \
    template TensorT<T> dropout_backward<T>(const TensorT<T>&, const TensorT<T>&);

SWP_INSTANTIATE_OPS(float)
SWP_INSTANTIATE_OPS(double)

#undef SWP_INSTANTIATE_OPS

} // namespace swp::ops
