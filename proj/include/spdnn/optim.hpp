#pragma once

#include "spdnn/network.hpp"

namespace spdnn {

/// One Nesterov momentum update in the rearranged form
///
///   v     <- mu * v - lr * g
///   theta <- theta + (mu * v - lr * g)
///
/// where g is the gradient at the current parameters. Every gradient is
/// checked before any parameter moves; a non-finite entry throws
/// NumericError naming the node and leaves the store untouched.
template <typename Scalar>
void nesterov_step(ParameterStore<Scalar>& store, const Gradients<Scalar>& grads,
                   double learning_rate, double momentum);

}  // namespace spdnn
