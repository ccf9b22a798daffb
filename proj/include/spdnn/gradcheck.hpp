#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "spdnn/network.hpp"

namespace spdnn {

using BackwardFn = std::function<Gradients<double>(
    const MergedNetworkSpec&, const ParameterStore<double>&, const ForwardPass<double>&,
    const Tensor<double>&)>;

struct GradCheckOptions {
  double tolerance = 1e-4;
  double step = 1e-5;
  Index max_params = 10000;  // above this, a seeded subsample is probed
  std::uint64_t seed = 0;
  Mode mode = Mode::Train;
  BackwardFn backward;  // defaults to run_backward; tests swap in faulty ones
};

struct NodeCheck {
  std::string node;
  double max_rel_error = 0.0;
  Index probed = 0;
  Index kinks = 0;  // probes straddling a non-differentiable point, not scored
  bool passed = true;
};

struct GradCheckReport {
  std::vector<NodeCheck> nodes;  // spec order, output merge last
  double max_rel_error = 0.0;
  bool passed = true;
};

/// Compares analytic BCE gradients against central differences. A node's
/// error is max|a - n| / max(max|a|, max|n|, 1e-8), both maxima taken over
/// every probed entry of the node's parameters, so a bias feeding batch norm
/// (true gradient zero, numeric gradient rounding noise) is judged against
/// the node's weights.
///
/// A probe whose step crosses a kink (ReLU at zero, a max-pool tie) is
/// recognized by its one-sided differences disagreeing while the analytic
/// value agrees with one of them; it is counted in `kinks` and left out of
/// the error. A wrong gradient matches neither side and is still scored.
GradCheckReport grad_check(const MergedNetworkSpec& spec, const ParameterStore<double>& store,
                           const Tensor<double>& batch, const Tensor<double>& target,
                           const GradCheckOptions& options = {});

std::string format_report(const GradCheckReport& report);

}  // namespace spdnn
