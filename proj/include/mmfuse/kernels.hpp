#pragma once

// Primitive tensor kernels and their reverse-mode counterparts. Every function
// is a pure function of its arguments. Backward kernels take the upstream
// gradient (same shape as the forward output) and return gradients for the
// differentiable inputs.

#include <cstddef>
#include <optional>
#include <vector>

#include "mmfuse/tensor.hpp"

namespace mmfuse {

struct ConvSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;
  bool has_bias = true;

  static ConvSpec pointwise(std::size_t in, std::size_t out, bool bias = true) {
    return {in, out, 1, 1, 1, 0, 1, bias};
  }
  static ConvSpec depthwise3x3(std::size_t channels, bool bias = true) {
    return {channels, channels, 3, 3, 1, 1, channels, bias};
  }
  static ConvSpec square(std::size_t in, std::size_t out, std::size_t k, bool bias = true) {
    return {in, out, k, k, 1, k / 2, 1, bias};
  }

  bool depthwise() const { return groups == in_channels && groups == out_channels; }
  Shape weight_shape() const { return {out_channels, in_channels / groups, kernel_h, kernel_w}; }
  Shape bias_shape() const { return {1, out_channels, 1, 1}; }
  std::size_t fan_in() const { return in_channels / groups * kernel_h * kernel_w; }

  // Throws ConfigError when the channel/group arithmetic is inconsistent.
  void validate() const;
  // Output extents for a given input; throws ShapeError if either would be < 1.
  Shape output_shape(const Shape& input) const;
};

enum class PoolMode { avg, max };
enum class ActivationKind { sigmoid, relu, gelu, silu, hardswish };
enum class BnMode { train, infer };
enum class BinaryOp { add, sub, mul };

inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kL2Epsilon = 1e-6;
inline constexpr double kBatchNormMomentum = 0.1;

template <typename T>
struct ConvGrads {
  BasicTensor<T> input;
  BasicTensor<T> weight;
  std::optional<BasicTensor<T>> bias;
};

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const ConvSpec& spec, const BasicTensor<T>& weight,
                      const BasicTensor<T>* bias);
template <typename T>
ConvGrads<T> conv2d_backward(const BasicTensor<T>& x, const ConvSpec& spec, const BasicTensor<T>& weight,
                             bool has_bias, const BasicTensor<T>& grad_out);

// 1-D same-padded convolution along the H axis of an (N,1,L,1) descriptor.
// weight is (1,1,k,1), bias (1,1,1,1).
template <typename T>
BasicTensor<T> conv1d(const BasicTensor<T>& x, std::size_t kernel_size, const BasicTensor<T>& weight,
                      const BasicTensor<T>* bias);
template <typename T>
ConvGrads<T> conv1d_backward(const BasicTensor<T>& x, std::size_t kernel_size, const BasicTensor<T>& weight,
                             bool has_bias, const BasicTensor<T>& grad_out);

template <typename T>
BasicTensor<T> adaptive_pool(const BasicTensor<T>& x, std::size_t out_h, std::size_t out_w, PoolMode mode);
template <typename T>
BasicTensor<T> adaptive_pool_backward(const BasicTensor<T>& x, std::size_t out_h, std::size_t out_w, PoolMode mode,
                                      const BasicTensor<T>& grad_out);

// Reduction across the channel axis at every (n,h,w): output (N,1,H,W).
template <typename T>
BasicTensor<T> channel_pool(const BasicTensor<T>& x, PoolMode mode);
template <typename T>
BasicTensor<T> channel_pool_backward(const BasicTensor<T>& x, PoolMode mode, const BasicTensor<T>& grad_out);

template <typename T>
T activate(T v, ActivationKind kind);
template <typename T>
T activate_derivative(T v, ActivationKind kind);
template <typename T>
BasicTensor<T> activation(const BasicTensor<T>& x, ActivationKind kind);
template <typename T>
BasicTensor<T> activation_backward(const BasicTensor<T>& x, ActivationKind kind, const BasicTensor<T>& grad_out);

template <typename T>
struct BatchNormStats {
  BasicTensor<T> mean;
  BasicTensor<T> var;
};

// gamma, beta, running_mean and running_var are per-channel (1,C,1,1).
// In train mode the batch statistics over (N,H,W) are used and, when
// `updated` is non-null, the momentum-blended running statistics are written
// there. The running variance blends the unbiased batch variance.
template <typename T>
BasicTensor<T> batch_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma, const BasicTensor<T>& beta,
                          const BasicTensor<T>& running_mean, const BasicTensor<T>& running_var, BnMode mode,
                          double epsilon = kBatchNormEpsilon, double momentum = kBatchNormMomentum,
                          BatchNormStats<T>* updated = nullptr);

template <typename T>
struct BatchNormGrads {
  BasicTensor<T> input;
  BasicTensor<T> gamma;
  BasicTensor<T> beta;
};
template <typename T>
BatchNormGrads<T> batch_norm_backward(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                                      const BasicTensor<T>& running_mean, const BasicTensor<T>& running_var,
                                      BnMode mode, double epsilon, const BasicTensor<T>& grad_out);

template <typename T>
BasicTensor<T> upsample_nearest(const BasicTensor<T>& x, std::size_t factor);
template <typename T>
BasicTensor<T> upsample_nearest_backward(const BasicTensor<T>& grad_out, std::size_t factor);

template <typename T>
BasicTensor<T> l2_normalize_channels(const BasicTensor<T>& x, double epsilon = kL2Epsilon);
template <typename T>
BasicTensor<T> l2_normalize_channels_backward(const BasicTensor<T>& x, double epsilon,
                                              const BasicTensor<T>& grad_out);

// Population variance over H*W per (n,c): output (N,C,1,1).
template <typename T>
BasicTensor<T> channel_variance(const BasicTensor<T>& x);
template <typename T>
BasicTensor<T> channel_variance_backward(const BasicTensor<T>& x, const BasicTensor<T>& grad_out);

// b broadcasts onto a: each extent of b equals a's or is 1.
bool broadcastable(const Shape& a, const Shape& b);
template <typename T>
BasicTensor<T> elementwise(const BasicTensor<T>& a, const BasicTensor<T>& b, BinaryOp op);

template <typename T>
struct BinaryGrads {
  BasicTensor<T> a;
  BasicTensor<T> b;
};
template <typename T>
BinaryGrads<T> elementwise_backward(const BasicTensor<T>& a, const BasicTensor<T>& b, BinaryOp op,
                                    const BasicTensor<T>& grad_out);

// Sum over the axes where `target` has extent 1 but `g` does not.
template <typename T>
BasicTensor<T> reduce_to(const BasicTensor<T>& g, const Shape& target);

template <typename T>
BasicTensor<T> channel_slice(const BasicTensor<T>& x, std::size_t begin, std::size_t count);
template <typename T>
std::vector<BasicTensor<T>> channel_split(const BasicTensor<T>& x, const std::vector<std::size_t>& sizes);
template <typename T>
BasicTensor<T> channel_concat(const std::vector<BasicTensor<T>>& parts);

// View channels as (G, C/G), transpose to (C/G, G) and flatten back:
// output channel i*G+g holds input channel g*(C/G)+i.
template <typename T>
BasicTensor<T> channel_shuffle(const BasicTensor<T>& x, std::size_t groups);
// perm[out_channel] = source input channel.
std::vector<std::size_t> shuffle_permutation(std::size_t channels, std::size_t groups);

template <typename T>
T sum_all(const BasicTensor<T>& x);

}  // namespace mmfuse
