#pragma once

#include <set>
#include <string>
#include <utility>
#include <vector>

#include "spdnn/arch_ir.hpp"

namespace spdnn {

/// (operation signature, depth) pair, e.g. ("7C", 3).
struct NodeLabel {
  std::string op_signature;
  int depth = 0;

  auto operator<=>(const NodeLabel&) const = default;
};

/// "(7C,3)"
std::string to_string(const NodeLabel& label);

/// True when `sig` matches ([0-9]+C)|F|(P[0-9]+).
bool is_valid_signature(const std::string& sig);

/// Internal node identifiers are indices into ArchGraph::nodes; the two
/// markers use negative ids and never carry a label.
using NodeId = int;
inline constexpr NodeId kInputNode = -1;
inline constexpr NodeId kOutputNode = -2;

struct GraphNode {
  NodeLabel label;
  LayerSpec layer;           // representative operation; its width is out_channels
  std::vector<int> origins;  // sorted parent-network indices
  std::string name;          // "d<depth>_<opsig>_<i>", unique within a graph

  int out_channels() const;
};

using Edge = std::pair<NodeId, NodeId>;

/// Labeled DAG with shared input/output markers.
struct ArchGraph {
  Shape3 input;
  std::vector<GraphNode> nodes;
  std::set<Edge> edges;

  std::vector<NodeId> predecessors(NodeId node) const;
  std::vector<NodeId> successors(NodeId node) const;
  /// Name of a node, with "input"/"output" for the markers.
  std::string node_name(NodeId node) const;
};

/// Assigns "d<depth>_<opsig>_<i>" names; i counts nodes sharing a label in
/// node order.
void assign_node_names(ArchGraph& g);

ArchGraph network_to_graph(const NetworkSpec& spec);

/// Places graphs side by side with one shared input and one shared output.
/// Origins are re-based so graph k's origins follow those of graphs < k.
ArchGraph parallel_compose(const std::vector<ArchGraph>& graphs);

/// Merges every class of equally labeled internal nodes into one node,
/// unioning edges and origins. Merged width is the class maximum, batch norm
/// is enabled if any member uses it, and the activation comes from the member
/// with the lowest origin.
ArchGraph contract(const ArchGraph& g);

/// Invariant violations, one human-readable entry each; empty iff valid.
std::vector<std::string> validate_graph(const ArchGraph& g);

/// Stable diffable dump: "NAME depth=D origins=a,b" per node then
/// "U -> V" per edge, both sorted.
std::string dump_graph(const ArchGraph& g);

/// Canonical text including widths and operations; equal strings mean
/// structurally equal graphs (labels are unique after contraction, and the
/// names disambiguate before it).
std::string canonical_form(const ArchGraph& g);
inline bool structurally_equal(const ArchGraph& a, const ArchGraph& b) {
  return canonical_form(a) == canonical_form(b);
}

}  // namespace spdnn
