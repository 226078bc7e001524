// Differentiable primitives over Tensor<T>.
//
// Every function computes its value eagerly and, when a tape is active and at
// least one input requires a gradient, records its local backward rule.
// Broadcasting is limited to scalar tensors (shape {1}) and per-channel
// vectors applied along axis 1.
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "snas/tensor.hpp"

namespace snas {

struct Conv2dOptions {
    std::size_t stride = 1;
    std::size_t padding = 0;
    std::size_t dilation = 1;
    std::size_t groups = 1;
};

struct Pool2dOptions {
    std::size_t kernel = 3;
    std::size_t stride = 1;
    std::size_t padding = 1;
};

inline constexpr double kBatchNormEps = 1e-5;

/// Output length of a strided, padded, dilated window along one axis.
std::size_t conv_output_size(std::size_t in, std::size_t kernel, std::size_t stride,
                             std::size_t padding, std::size_t dilation = 1);

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& x, T factor);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& x, T offset);
/// x * s where s has shape {1}.
template <typename T> Tensor<T> mul_scalar(const Tensor<T>& x, const Tensor<T>& s);

template <typename T> Tensor<T> relu(const Tensor<T>& x);
template <typename T> Tensor<T> exp(const Tensor<T>& x);
template <typename T> Tensor<T> log(const Tensor<T>& x);

template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);
/// Full contraction <a, b> as a scalar tensor.
template <typename T> Tensor<T> dot(const Tensor<T>& a, const Tensor<T>& b);

/// (m,k) x (k,n) -> (m,n)
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
/// Adds bias[c] along axis 1 of a rank-2 or rank-4 tensor.
template <typename T> Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias);

/// x: (N,C,H,W), weight: (O, C/groups, KH, KW).
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Conv2dOptions& opt = {});

/// Normalizes with the statistics of the current batch, then applies the
/// per-channel affine gamma * x_hat + beta.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     double eps = kBatchNormEps);

/// Normalizes with fixed per-channel statistics instead of the batch's.
template <typename T>
Tensor<T> batch_norm_fixed(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                           const Tensor<T>& mean, const Tensor<T>& var, double eps = kBatchNormEps);

/// Moves running statistics toward the batch mean and unbiased variance of
/// x by `momentum`. Not recorded.
template <typename T>
void update_running_stats(const Tensor<T>& x, Tensor<T>& mean, Tensor<T>& var, double momentum);

/// Average pooling; padded cells count toward the divisor (always kernel^2).
template <typename T> Tensor<T> avg_pool2d(const Tensor<T>& x, const Pool2dOptions& opt = {});
template <typename T> Tensor<T> max_pool2d(const Tensor<T>& x, const Pool2dOptions& opt = {});
/// (N,C,H,W) -> (N,C)
template <typename T> Tensor<T> global_avg_pool(const Tensor<T>& x);

/// Softmax along the last axis of a rank-1 or rank-2 tensor.
template <typename T> Tensor<T> softmax(const Tensor<T>& x);
template <typename T> Tensor<T> log_softmax(const Tensor<T>& x);
/// Mean over the batch of -log softmax(logits)[label].
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels);

/// Concatenation of rank-4 tensors along the channel axis.
template <typename T> Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts);
/// Row r of a rank-2 tensor, as a rank-1 tensor.
template <typename T> Tensor<T> row(const Tensor<T>& x, std::size_t r);
/// sum_k weights[k] * inputs[k]. Undefined inputs contribute nothing; at
/// least one input must be defined.
template <typename T>
Tensor<T> mix(const Tensor<T>& weights, const std::vector<Tensor<T>>& inputs);

}  // namespace snas
