#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "spdnn/arch_ir.hpp"
#include "spdnn/graph.hpp"

namespace spdnn {

/// Reserved feeder identifier for the network input.
inline constexpr std::string_view kInputId = "input";

struct MergedNode {
  std::string id;
  LayerSpec op;
  /// Channel-wise concatenated in this order before `op` is applied.
  std::vector<std::string> feeders;
};

/// N image outputs of p channels each, concatenated and mapped back to p
/// channels by a (k, k, N*p, p) convolution.
struct ConvMerge {
  int kernel = 1;
  int in_channels = 1;
  int out_channels = 1;
  Activation activation = Activation::Sigmoid;

  std::array<int, 4> kernel_shape() const {
    return {kernel, kernel, in_channels, out_channels};
  }
  friend bool operator==(const ConvMerge&, const ConvMerge&) = default;
};

/// N vector outputs of length p, concatenated to p*N and mapped to p by a
/// (p*N, p) weight matrix.
struct DenseMerge {
  int in_units = 1;
  int out_units = 1;
  Activation activation = Activation::Sigmoid;

  std::array<int, 2> weight_shape() const { return {in_units, out_units}; }
  friend bool operator==(const DenseMerge&, const DenseMerge&) = default;
};

/// Exactly one node feeds the output; its activation is the network output.
struct Passthrough {
  friend bool operator==(const Passthrough&, const Passthrough&) = default;
};

using OutputMerge = std::variant<ConvMerge, DenseMerge, Passthrough>;

/// Per-node shape bookkeeping derived from a MergedNetworkSpec.
struct ResolvedNode {
  Shape3 in;   // after concatenation
  Shape3 out;
};

/// DAG-shaped network, nodes in topological order.
struct MergedNetworkSpec {
  std::string name;
  Shape3 input;
  std::vector<MergedNode> nodes;
  std::vector<std::string> output_feeders;
  OutputMerge output_merge = Passthrough{};

  /// Index of a node by id, or -1.
  int find(std::string_view id) const;

  /// Shapes per node (same order as `nodes`). Throws SpecError on unknown or
  /// forward-referenced feeders and ShapeError on inconsistent concatenation.
  std::vector<ResolvedNode> resolve() const;

  /// Shape delivered to the caller after the output merge.
  Shape3 output_shape() const;
};

/// Throws SpecError/ShapeError unless every structural invariant holds:
/// unique ids, topological order, in_channels = sum of feeder channels,
/// output-merge dimensions equal to N*p -> p.
void check_merged(const MergedNetworkSpec& spec);

std::int64_t count_params(const MergedNetworkSpec& spec, int input_channels);
inline std::int64_t count_params(const MergedNetworkSpec& spec) {
  return count_params(spec, spec.input.channels);
}

struct MergeOptions {
  std::int64_t target_params = 0;  // 0 = mean of the parents' counts
  double parity_tolerance = 0.10;
  int output_merge_kernel = 1;

  void validate() const;  // throws SpecError
};

using WidthMap = std::map<std::string, int>;

/// Back-translates a contracted graph. Nodes with several feeders
/// concatenate them ordered by (lowest origin, depth, name).
MergedNetworkSpec graph_to_network(const ArchGraph& g, const WidthMap& widths,
                                   const MergeOptions& opts,
                                   std::string name = "spdnn");

/// Width of every non-pool node: the contracted graph's widths scaled by one
/// common factor, with nodes feeding the output pinned to the output arity p.
WidthMap solve_widths(const ArchGraph& g, const std::vector<NetworkSpec>& parents,
                      const MergeOptions& opts);

/// network_to_graph -> parallel_compose -> contract -> solve_widths ->
/// graph_to_network.
MergedNetworkSpec spdnn_merge(const std::vector<NetworkSpec>& parents,
                              const MergeOptions& opts = {});

/// A plain chain as a merged spec (Passthrough output), node ids matching
/// what spdnn_merge produces for the same single parent.
MergedNetworkSpec to_merged(const NetworkSpec& spec);

/// Non-empty when parent counts spread by more than 25% of their mean.
std::string parity_warning(const std::vector<std::int64_t>& parent_counts);

std::string serialize_merged(const MergedNetworkSpec& spec);
MergedNetworkSpec parse_merged(std::string_view text);

/// Accepts either a plain architecture file or a merged-network file.
MergedNetworkSpec parse_any_network(std::string_view text);

}  // namespace spdnn
