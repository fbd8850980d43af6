#pragma once

#include <random>
#include <utility>

#include "swp/tensor.hpp"

namespace swp::ops {

// Layer primitives for the three networks. Inputs are batched NCHW
// tensors. All forward/backward pairs are pure with respect to their
// tensor arguments except batchnorm_forward, which updates the moving
// statistics in train mode. Everything is templated so the gradient
// checks can rerun the identical code in 64-bit.

/// 3x3 convolution, stride 1, zero padding 1 (output spatial extent
/// equals input). kernel is (out_ch, in_ch, 3, 3), bias (out_ch).
template <typename T>
TensorT<T> conv2d_forward(const TensorT<T>& input, const TensorT<T>& kernel,
                          const TensorT<T>& bias);

template <typename T>
struct ConvGrads {
    TensorT<T> input;
    TensorT<T> kernel;
    TensorT<T> bias;
};

template <typename T>
ConvGrads<T> conv2d_backward(const TensorT<T>& input, const TensorT<T>& kernel,
                             const TensorT<T>& grad_out);

/// Per-channel batch normalization. In train mode the batch statistics
/// are used and the moving statistics are blended as
/// moving = momentum * moving + (1 - momentum) * batch; in infer mode
/// the moving statistics are applied unchanged. batch_mean_out /
/// batch_var_out, when given, receive the train-mode statistics needed
/// by the backward pass.
template <typename T>
TensorT<T> batchnorm_forward(const TensorT<T>& input, const TensorT<T>& gamma,
                             const TensorT<T>& beta, TensorT<T>& moving_mean,
                             TensorT<T>& moving_var, T epsilon, T momentum, bool train,
                             TensorT<T>* batch_mean_out = nullptr,
                             TensorT<T>* batch_var_out = nullptr);

template <typename T>
struct BatchNormGrads {
    TensorT<T> input;
    TensorT<T> gamma;
    TensorT<T> beta;
};

template <typename T>
BatchNormGrads<T> batchnorm_backward(const TensorT<T>& input, const TensorT<T>& gamma,
                                     const TensorT<T>& batch_mean,
                                     const TensorT<T>& batch_var, T epsilon,
                                     const TensorT<T>& grad_out);

template <typename T>
TensorT<T> relu_forward(const TensorT<T>& input);

/// grad wrt the relu input; `input` is the pre-activation tensor.
template <typename T>
TensorT<T> relu_backward(const TensorT<T>& input, const TensorT<T>& grad_out);

// 2x2 pooling with stride 2; odd trailing rows/columns are dropped.
// Requires spatial extent >= 2.
template <typename T>
TensorT<T> max_pool2_forward(const TensorT<T>& input);
template <typename T>
TensorT<T> max_pool2_backward(const TensorT<T>& input, const TensorT<T>& grad_out);
template <typename T>
TensorT<T> avg_pool2_forward(const TensorT<T>& input);
template <typename T>
TensorT<T> avg_pool2_backward(const TensorT<T>& input, const TensorT<T>& grad_out);

/// input (N, K), weight (units, K), bias (units) -> (N, units)
template <typename T>
TensorT<T> dense_forward(const TensorT<T>& input, const TensorT<T>& weight,
                         const TensorT<T>& bias);

template <typename T>
struct DenseGrads {
    TensorT<T> input;
    TensorT<T> weight;
    TensorT<T> bias;
};

template <typename T>
DenseGrads<T> dense_backward(const TensorT<T>& input, const TensorT<T>& weight,
                             const TensorT<T>& grad_out);

/// Row-wise softmax over (N, K), computed with max subtraction.
template <typename T>
TensorT<T> softmax_forward(const TensorT<T>& logits);

/// grad wrt logits given the softmax output and grad wrt that output.
template <typename T>
TensorT<T> softmax_backward(const TensorT<T>& output, const TensorT<T>& grad_out);

/// Inverted dropout. Train mode zeroes with probability `rate` and
/// scales survivors by 1/(1-rate); infer mode is the exact identity.
/// Returns (output, mask) where mask holds the per-element multiplier
/// so the backward pass reuses the same pattern.
template <typename T>
std::pair<TensorT<T>, TensorT<T>> dropout_forward(const TensorT<T>& input, T rate,
                                                  bool train, std::mt19937& rng);

template <typename T>
TensorT<T> dropout_backward(const TensorT<T>& mask, const TensorT<T>& grad_out);

} // namespace swp::ops
