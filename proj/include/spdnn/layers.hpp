#pragma once

// Layer kernels of the training engine. Every forward has a matching
// backward; both are free functions over Tensor/Matrix values so they can be
// checked against brute-force oracles one at a time.

#include <vector>

#include "spdnn/arch_ir.hpp"
#include "spdnn/tensor.hpp"

namespace spdnn {

enum class Mode { Train, Eval };

// ---- convolution -----------------------------------------------------------
//
// A (k, k, C_in, C_out) kernel is stored as a C_out x (C_in*k*k) matrix; the
// entry for (ky, kx, ci, co) lives at row co, column conv_column(k, ky, kx, ci).
// Stride 1, zero "same" padding of (k-1)/2 on every side.

inline Index conv_column(int kernel, int ky, int kx, Index ci) {
  return (ci * kernel + ky) * kernel + kx;
}

template <typename Scalar>
struct ConvGrads {
  Tensor<Scalar> input;
  Matrix<Scalar> weight;
  Vector<Scalar> bias;
};

template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& input, const Matrix<Scalar>& weight,
                      const Vector<Scalar>& bias, int kernel);

template <typename Scalar>
ConvGrads<Scalar> conv2d_backward(const Tensor<Scalar>& input, const Matrix<Scalar>& weight,
                                  int kernel, const Tensor<Scalar>& grad_output);

// ---- max pooling -----------------------------------------------------------

template <typename Scalar>
struct PoolResult {
  Tensor<Scalar> output;
  std::vector<Index> argmax;  // flat input index per output element
};

template <typename Scalar>
PoolResult<Scalar> maxpool(const Tensor<Scalar>& input, int window);

template <typename Scalar>
Tensor<Scalar> maxpool_backward(const Tensor<Scalar>& input, const PoolResult<Scalar>& forward,
                                const Tensor<Scalar>& grad_output);

// ---- batch normalization ---------------------------------------------------

inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.9;  // weight on the old running value

template <typename Scalar>
struct RunningStats {
  Vector<Scalar> mean;
  Vector<Scalar> var;
};

template <typename Scalar>
struct BatchNormResult {
  Tensor<Scalar> output;
  Tensor<Scalar> normalized;  // x_hat
  Vector<Scalar> inv_std;
  Mode mode = Mode::Train;
  RunningStats<Scalar> running;  // updated statistics in train mode, input copy in eval
};

/// Train mode normalizes each channel over (batch, H, W) with the biased
/// batch variance and blends the unbiased variance into the running
/// statistics; eval mode uses the running statistics.
template <typename Scalar>
BatchNormResult<Scalar> batch_norm(const Tensor<Scalar>& input, const Vector<Scalar>& scale,
                                   const Vector<Scalar>& shift,
                                   const RunningStats<Scalar>& running, Mode mode);

template <typename Scalar>
struct BatchNormGrads {
  Tensor<Scalar> input;
  Vector<Scalar> scale;
  Vector<Scalar> shift;
};

template <typename Scalar>
BatchNormGrads<Scalar> batch_norm_backward(const BatchNormResult<Scalar>& forward,
                                           const Vector<Scalar>& scale,
                                           const Tensor<Scalar>& grad_output);

// ---- dense -----------------------------------------------------------------
//
// Weights are (fan_in, units); the input is flattened per sample in (C, H, W)
// order and the output has shape (batch, units, 1, 1).

template <typename Scalar>
struct DenseGrads {
  Tensor<Scalar> input;
  Matrix<Scalar> weight;
  Vector<Scalar> bias;
};

template <typename Scalar>
Tensor<Scalar> dense(const Tensor<Scalar>& input, const Matrix<Scalar>& weight,
                     const Vector<Scalar>& bias);

template <typename Scalar>
DenseGrads<Scalar> dense_backward(const Tensor<Scalar>& input, const Matrix<Scalar>& weight,
                                  const Tensor<Scalar>& grad_output);

// ---- activations -----------------------------------------------------------

template <typename Scalar>
Tensor<Scalar> activate(const Tensor<Scalar>& input, Activation act);

/// Gradient w.r.t. the activation input, expressed through its output.
template <typename Scalar>
Tensor<Scalar> activate_backward(const Tensor<Scalar>& output, Activation act,
                                 const Tensor<Scalar>& grad_output);

// ---- concatenation ---------------------------------------------------------

template <typename Scalar>
Tensor<Scalar> concat_channels(const std::vector<const Tensor<Scalar>*>& parts);

/// Channel slice [first, first + count) of `t`.
template <typename Scalar>
Tensor<Scalar> slice_channels(const Tensor<Scalar>& t, Index first, Index count);

// ---- loss ------------------------------------------------------------------

inline constexpr double kBceEpsilon = 1e-7;

/// Mean over all elements of -[t ln p + (1-t) ln(1-p)], p clamped to
/// [eps, 1-eps]. Accumulated in double.
template <typename Scalar>
double bce_loss(const Tensor<Scalar>& prediction, const Tensor<Scalar>& target);

/// dL/dp = (p_c - t) / (p_c (1 - p_c)) / M with p_c the clamped prediction.
/// The clamp passes the gradient straight through, so saturated outputs
/// still receive a training signal.
template <typename Scalar>
Tensor<Scalar> bce_loss_grad(const Tensor<Scalar>& prediction, const Tensor<Scalar>& target);

}  // namespace spdnn
