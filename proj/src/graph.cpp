#include "spdnn/graph.hpp"

#include <algorithm>
#include <climits>
#include <map>
#include <queue>
#include <regex>
#include <sstream>

#include "spdnn/errors.hpp"
#include "text_util.hpp"

namespace spdnn {

std::string to_string(const NodeLabel& label) {
  return "(" + label.op_signature + "," + std::to_string(label.depth) + ")";
}

bool is_valid_signature(const std::string& sig) {
  static const std::regex pattern("([0-9]+C)|F|(P[0-9]+)");
  return std::regex_match(sig, pattern);
}

// Pools report 0: they pass their input width through.
int GraphNode::out_channels() const { return layer_out_channels(layer, 0); }

std::vector<NodeId> ArchGraph::predecessors(NodeId node) const {
  std::vector<NodeId> out;
  for (const auto& [u, v] : edges)
    if (v == node) out.push_back(u);
  return out;
}

std::vector<NodeId> ArchGraph::successors(NodeId node) const {
  std::vector<NodeId> out;
  for (const auto& [u, v] : edges)
    if (u == node) out.push_back(v);
  return out;
}

std::string ArchGraph::node_name(NodeId node) const {
  if (node == kInputNode) return "input";
  if (node == kOutputNode) return "output";
  if (node < 0 || node >= static_cast<NodeId>(nodes.size()))
    return "?" + std::to_string(node);
  return nodes[node].name;
}

void assign_node_names(ArchGraph& g) {
  std::map<NodeLabel, int> counter;
  for (auto& node : g.nodes) {
    int i = counter[node.label]++;
    node.name = "d" + std::to_string(node.label.depth) + "_" +
                node.label.op_signature + "_" + std::to_string(i);
  }
}

ArchGraph network_to_graph(const NetworkSpec& spec) {
  ArchGraph g;
  g.input = spec.input();
  NodeId prev = kInputNode;
  for (std::size_t i = 0; i < spec.layers().size(); ++i) {
    const auto& layer = spec.layers()[i];
    GraphNode node;
    node.label = {op_signature(layer), static_cast<int>(i) + 1};
    node.layer = layer;
    node.origins = {0};
    g.nodes.push_back(std::move(node));
    const NodeId id = static_cast<NodeId>(i);
    g.edges.insert({prev, id});
    prev = id;
  }
  g.edges.insert({prev, kOutputNode});
  assign_node_names(g);
  return g;
}

ArchGraph parallel_compose(const std::vector<ArchGraph>& graphs) {
  if (graphs.empty()) throw SpecError("parallel_compose needs at least one graph");
  ArchGraph out;
  out.input = graphs.front().input;
  int origin_offset = 0;
  for (const auto& g : graphs) {
    if (!(g.input == out.input))
      throw SpecError("parent networks disagree on input shape");
    const NodeId base = static_cast<NodeId>(out.nodes.size());
    int max_origin = -1;
    for (auto node : g.nodes) {
      for (int& o : node.origins) {
        max_origin = std::max(max_origin, o);
        o += origin_offset;
      }
      out.nodes.push_back(std::move(node));
    }
    auto remap = [&](NodeId id) { return id < 0 ? id : id + base; };
    for (const auto& [u, v] : g.edges) out.edges.insert({remap(u), remap(v)});
    origin_offset += max_origin + 1;
  }
  assign_node_names(out);
  return out;
}

ArchGraph contract(const ArchGraph& g) {
  // Group node indices by label.
  std::map<NodeLabel, std::vector<NodeId>> classes;
  for (NodeId i = 0; i < static_cast<NodeId>(g.nodes.size()); ++i)
    classes[g.nodes[i].label].push_back(i);

  struct ClassInfo {
    NodeLabel label;
    std::vector<NodeId> members;
    int min_origin;
  };
  std::vector<ClassInfo> ordered;
  for (auto& [label, members] : classes) {
    int min_origin = INT_MAX;
    for (NodeId m : members)
      for (int o : g.nodes[m].origins) min_origin = std::min(min_origin, o);
    ordered.push_back({label, members, min_origin});
  }
  std::sort(ordered.begin(), ordered.end(), [](const ClassInfo& a, const ClassInfo& b) {
    return std::tie(a.label.depth, a.min_origin, a.members.front()) <
           std::tie(b.label.depth, b.min_origin, b.members.front());
  });

  ArchGraph out;
  out.input = g.input;
  std::vector<NodeId> new_id(g.nodes.size(), 0);
  for (const auto& cls : ordered) {
    // Representative: member with the lowest origin, ties by node order.
    NodeId rep = cls.members.front();
    auto first_origin = [&](NodeId m) {
      const auto& o = g.nodes[m].origins;
      return o.empty() ? INT_MAX : o.front();
    };
    for (NodeId m : cls.members)
      if (first_origin(m) < first_origin(rep)) rep = m;

    GraphNode node = g.nodes[rep];
    int width = 0;
    bool any_bn = false;
    std::set<int> origins;
    for (NodeId m : cls.members) {
      const auto& member = g.nodes[m];
      width = std::max(width, member.out_channels());
      if (const auto* conv = std::get_if<ConvLayer>(&member.layer))
        any_bn = any_bn || conv->batch_norm;
      origins.insert(member.origins.begin(), member.origins.end());
    }
    node.layer = with_width(node.layer, width);
    if (auto* conv = std::get_if<ConvLayer>(&node.layer)) conv->batch_norm = any_bn;
    node.origins.assign(origins.begin(), origins.end());

    const NodeId id = static_cast<NodeId>(out.nodes.size());
    for (NodeId m : cls.members) new_id[m] = id;
    out.nodes.push_back(std::move(node));
  }

  auto remap = [&](NodeId id) { return id < 0 ? id : new_id[id]; };
  for (const auto& [u, v] : g.edges) out.edges.insert({remap(u), remap(v)});
  assign_node_names(out);
  return out;
}

std::vector<std::string> validate_graph(const ArchGraph& g) {
  std::vector<std::string> violations;
  const NodeId n = static_cast<NodeId>(g.nodes.size());
  auto exists = [&](NodeId id) {
    return id == kInputNode || id == kOutputNode || (id >= 0 && id < n);
  };

  for (NodeId i = 0; i < n; ++i) {
    const auto& node = g.nodes[i];
    if (!is_valid_signature(node.label.op_signature))
      violations.push_back("node " + node.name + ": invalid op signature '" +
                           node.label.op_signature + "'");
    if (node.label.depth < 1)
      violations.push_back("node " + node.name + ": depth must be >= 1");
    if (op_signature(node.layer) != node.label.op_signature)
      violations.push_back("node " + node.name + ": label disagrees with operation");
  }

  std::vector<Edge> usable;
  for (const auto& e : g.edges) {
    const auto& [u, v] = e;
    const std::string desc = g.node_name(u) + " -> " + g.node_name(v);
    if (!exists(u) || !exists(v)) {
      violations.push_back("edge " + desc + ": unknown endpoint");
      continue;
    }
    if (v == kInputNode || u == kOutputNode) {
      violations.push_back("edge " + desc + ": wrong direction at marker");
      continue;
    }
    if (u == kInputNode && v == kOutputNode) {
      violations.push_back("edge " + desc + ": input wired directly to output");
      continue;
    }
    if (u >= 0 && v >= 0 && g.nodes[v].label.depth != g.nodes[u].label.depth + 1)
      violations.push_back("edge " + desc + ": depth " +
                           std::to_string(g.nodes[u].label.depth) + " -> " +
                           std::to_string(g.nodes[v].label.depth) +
                           " does not increase by 1");
    if (u == kInputNode && g.nodes[v].label.depth != 1)
      violations.push_back("edge " + desc + ": input feeds a node at depth " +
                           std::to_string(g.nodes[v].label.depth));
    usable.push_back(e);
  }

  // Slots 0..n-1 internal, n = input, n+1 = output.
  auto slot = [&](NodeId id) { return id == kInputNode ? n : id == kOutputNode ? n + 1 : id; };
  const int total = n + 2;
  std::vector<std::vector<int>> fwd(total), bwd(total);
  std::vector<int> indegree(total, 0);
  for (const auto& [u, v] : usable) {
    fwd[slot(u)].push_back(slot(v));
    bwd[slot(v)].push_back(slot(u));
    ++indegree[slot(v)];
  }

  std::queue<int> ready;
  for (int i = 0; i < total; ++i)
    if (indegree[i] == 0) ready.push(i);
  int visited = 0;
  while (!ready.empty()) {
    int cur = ready.front();
    ready.pop();
    ++visited;
    for (int nxt : fwd[cur])
      if (--indegree[nxt] == 0) ready.push(nxt);
  }
  if (visited != total) violations.push_back("graph contains a cycle");

  auto reach = [&](int start, const std::vector<std::vector<int>>& adj) {
    std::vector<char> seen(total, 0);
    std::vector<int> stack{start};
    seen[start] = 1;
    while (!stack.empty()) {
      int cur = stack.back();
      stack.pop_back();
      for (int nxt : adj[cur])
        if (!seen[nxt]) {
          seen[nxt] = 1;
          stack.push_back(nxt);
        }
    }
    return seen;
  };
  const auto from_input = reach(n, fwd);
  const auto to_output = reach(n + 1, bwd);
  for (NodeId i = 0; i < n; ++i)
    if (!from_input[i] || !to_output[i])
      violations.push_back("node " + g.nodes[i].name +
                           ": not on any input -> output path");
  return violations;
}

namespace {

// Sort key placing the input first and the output last.
std::pair<int, std::string> order_key(const ArchGraph& g, NodeId id) {
  if (id == kInputNode) return {0, "input"};
  if (id == kOutputNode) return {INT_MAX, "output"};
  return {g.nodes[id].label.depth, g.nodes[id].name};
}

std::vector<NodeId> sorted_nodes(const ArchGraph& g) {
  std::vector<NodeId> ids(g.nodes.size());
  for (NodeId i = 0; i < static_cast<NodeId>(ids.size()); ++i) ids[i] = i;
  std::sort(ids.begin(), ids.end(), [&](NodeId a, NodeId b) {
    return order_key(g, a) < order_key(g, b);
  });
  return ids;
}

std::vector<Edge> sorted_edges(const ArchGraph& g) {
  std::vector<Edge> edges(g.edges.begin(), g.edges.end());
  std::sort(edges.begin(), edges.end(), [&](const Edge& a, const Edge& b) {
    return std::pair{order_key(g, a.first), order_key(g, a.second)} <
           std::pair{order_key(g, b.first), order_key(g, b.second)};
  });
  return edges;
}

std::string join_origins(const std::vector<int>& origins) {
  std::string out;
  for (std::size_t i = 0; i < origins.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(origins[i]);
  }
  return out;
}

}  // namespace

std::string dump_graph(const ArchGraph& g) {
  std::ostringstream out;
  for (NodeId id : sorted_nodes(g)) {
    const auto& node = g.nodes[id];
    out << node.name << " depth=" << node.label.depth
        << " origins=" << join_origins(node.origins) << "\n";
  }
  for (const auto& [u, v] : sorted_edges(g))
    out << g.node_name(u) << " -> " << g.node_name(v) << "\n";
  return out.str();
}

std::string canonical_form(const ArchGraph& g) {
  std::ostringstream out;
  out << "input " << g.input.height << " " << g.input.width << " "
      << g.input.channels << "\n";
  for (NodeId id : sorted_nodes(g)) {
    const auto& node = g.nodes[id];
    out << node.name << " " << to_string(node.label) << " "
        << detail::serialize_layer(node.layer)
        << " origins=" << join_origins(node.origins) << "\n";
  }
  for (const auto& [u, v] : sorted_edges(g))
    out << g.node_name(u) << " -> " << g.node_name(v) << "\n";
  return out.str();
}

}  // namespace spdnn
