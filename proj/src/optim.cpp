#include "spdnn/optim.hpp"

#include "spdnn/errors.hpp"

namespace spdnn {

template <typename Scalar>
void nesterov_step(ParameterStore<Scalar>& store, const Gradients<Scalar>& grads,
                   double learning_rate, double momentum) {
  auto& params = store.params();
  if (grads.size() != params.size())
    throw ShapeError("gradient count " + std::to_string(grads.size()) + " vs " +
                     std::to_string(params.size()) + " parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].rows() != params[i].value.rows() || grads[i].cols() != params[i].value.cols())
      throw ShapeError("gradient shape mismatch for " + params[i].node + "/" + params[i].role);
    if (!grads[i].allFinite())
      throw NumericError("node '" + params[i].node + "'",
                         "non-finite gradient for " + params[i].role);
  }
  const Scalar lr = static_cast<Scalar>(learning_rate);
  const Scalar mu = static_cast<Scalar>(momentum);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    p.velocity = mu * p.velocity - lr * grads[i];
    p.value += mu * p.velocity - lr * grads[i];
  }
}

template void nesterov_step(ParameterStore<float>&, const Gradients<float>&, double, double);
template void nesterov_step(ParameterStore<double>&, const Gradients<double>&, double, double);

}  // namespace spdnn
