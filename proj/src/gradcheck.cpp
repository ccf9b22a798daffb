#include "spdnn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

namespace spdnn {

GradCheckReport grad_check(const MergedNetworkSpec& spec, const ParameterStore<double>& store,
                           const Tensor<double>& batch, const Tensor<double>& target,
                           const GradCheckOptions& options) {
  const auto pass = run_forward(spec, store, batch, options.mode);
  const Gradients<double> analytic =
      options.backward ? options.backward(spec, store, pass, bce_loss_grad(pass.output, target))
                       : run_backward(spec, store, pass, bce_loss_grad(pass.output, target));

  // Flat (tensor, entry) list of everything to probe.
  std::vector<std::pair<std::size_t, Index>> probes;
  for (std::size_t t = 0; t < store.params().size(); ++t)
    for (Index e = 0; e < store.params()[t].value.size(); ++e) probes.emplace_back(t, e);
  if (static_cast<Index>(probes.size()) > options.max_params) {
    std::mt19937_64 rng(options.seed);
    std::shuffle(probes.begin(), probes.end(), rng);
    probes.resize(static_cast<std::size_t>(options.max_params));
    std::sort(probes.begin(), probes.end());
  }

  ParameterStore<double> probe = store;
  auto loss_at = [&](std::size_t t, Index e, double value) {
    double& slot = probe.params()[t].value.data()[e];
    const double saved = slot;
    slot = value;
    const double loss = bce_loss(run_forward(spec, probe, batch, options.mode).output, target);
    slot = saved;
    return loss;
  };

  const double base = bce_loss(pass.output, target);
  const double h = options.step;
  const std::size_t n_tensors = store.params().size();
  std::vector<double> diff(n_tensors, 0.0), scale(n_tensors, 1e-8);
  std::vector<Index> probed(n_tensors, 0), kinks(n_tensors, 0);
  for (const auto& [t, e] : probes) {
    ++probed[t];
    const double x = store.params()[t].value.data()[e];
    const double up = loss_at(t, e, x + h), down = loss_at(t, e, x - h);
    const double numeric = (up - down) / (2 * h);
    const double a = analytic[t].data()[e];
    const double forward = (up - base) / h, backward = (base - down) / h;
    const double sides = std::abs(forward - backward);
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    if (std::abs(a - numeric) > options.tolerance * denom &&
        std::min(std::abs(a - forward), std::abs(a - backward)) < 0.05 * sides) {
      ++kinks[t];
      continue;
    }
    diff[t] = std::max(diff[t], std::abs(a - numeric));
    scale[t] = std::max({scale[t], std::abs(a), std::abs(numeric)});
  }

  GradCheckReport report;
  std::vector<double> node_diff, node_scale;
  auto entry_for = [&](const std::string& node) -> std::size_t {
    for (std::size_t i = 0; i < report.nodes.size(); ++i)
      if (report.nodes[i].node == node) return i;
    report.nodes.push_back({node, 0.0, 0, 0, true});
    node_diff.push_back(0.0);
    node_scale.push_back(1e-8);
    return report.nodes.size() - 1;
  };
  for (const auto& node : spec.nodes) entry_for(node.id);
  for (std::size_t t = 0; t < n_tensors; ++t) {
    const std::size_t i = entry_for(store.params()[t].node);
    report.nodes[i].probed += probed[t];
    report.nodes[i].kinks += kinks[t];
    node_diff[i] = std::max(node_diff[i], diff[t]);
    node_scale[i] = std::max(node_scale[i], scale[t]);
  }
  for (std::size_t i = 0; i < report.nodes.size(); ++i)
    report.nodes[i].max_rel_error = node_diff[i] / node_scale[i];
  for (auto& n : report.nodes) {
    n.passed = n.max_rel_error < options.tolerance;
    report.max_rel_error = std::max(report.max_rel_error, n.max_rel_error);
    report.passed = report.passed && n.passed;
  }
  return report;
}

std::string format_report(const GradCheckReport& report) {
  std::string out;
  char line[160];
  for (const auto& n : report.nodes) {
    std::snprintf(line, sizeof line, "%-16s probed=%-6lld kinks=%-4lld max_rel_error=%.3e %s\n",
                  n.node.c_str(), static_cast<long long>(n.probed),
                  static_cast<long long>(n.kinks), n.max_rel_error, n.passed ? "ok" : "FAIL");
    out += line;
  }
  return out;
}

}  // namespace spdnn
