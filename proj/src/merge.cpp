#include "spdnn/merge.hpp"

#include <algorithm>
#include <climits>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "spdnn/errors.hpp"
#include "overloaded.hpp"
#include "text_util.hpp"

namespace spdnn {

using detail::overloaded;

int MergedNetworkSpec::find(std::string_view id) const {
  for (std::size_t i = 0; i < nodes.size(); ++i)
    if (nodes[i].id == id) return static_cast<int>(i);
  return -1;
}

namespace {

// Shape of a feeder given the shapes of nodes resolved so far.
Shape3 feeder_shape(const MergedNetworkSpec& spec,
                    const std::vector<ResolvedNode>& done,
                    const std::string& feeder, const std::string& consumer) {
  if (feeder == kInputId) return spec.input;
  const int idx = spec.find(feeder);
  if (idx < 0)
    throw SpecError("node '" + consumer + "' references unknown feeder '" + feeder + "'");
  if (idx >= static_cast<int>(done.size()))
    throw SpecError("node '" + consumer + "' references '" + feeder +
                    "' before it is defined");
  return done[idx].out;
}

Shape3 concat_shapes(const std::vector<Shape3>& parts, const std::string& consumer) {
  if (parts.empty()) throw SpecError("node '" + consumer + "' has no feeders");
  Shape3 out = parts.front();
  out.channels = 0;
  for (const auto& s : parts) {
    if (s.height != out.height || s.width != out.width)
      throw ShapeError("node '" + consumer + "' concatenates feeders of different spatial size (" +
                       std::to_string(out.height) + "x" + std::to_string(out.width) + " vs " +
                       std::to_string(s.height) + "x" + std::to_string(s.width) + ")");
    out.channels += s.channels;
  }
  return out;
}

}  // namespace

std::vector<ResolvedNode> MergedNetworkSpec::resolve() const {
  std::vector<ResolvedNode> done;
  done.reserve(nodes.size());
  for (const auto& node : nodes) {
    std::vector<Shape3> parts;
    for (const auto& f : node.feeders) parts.push_back(feeder_shape(*this, done, f, node.id));
    ResolvedNode r;
    r.in = concat_shapes(parts, node.id);
    r.out = propagate_shape(node.op, r.in);
    done.push_back(r);
  }
  return done;
}

Shape3 MergedNetworkSpec::output_shape() const {
  const auto resolved = resolve();
  std::vector<Shape3> parts;
  for (const auto& f : output_feeders) parts.push_back(feeder_shape(*this, resolved, f, "output"));
  const Shape3 cat = concat_shapes(parts, "output");
  return std::visit(overloaded{
                        [&](const ConvMerge& m) { return Shape3{cat.height, cat.width, m.out_channels}; },
                        [&](const DenseMerge& m) { return Shape3{1, 1, m.out_units}; },
                        [&](const Passthrough&) { return cat; },
                    },
                    output_merge);
}

void check_merged(const MergedNetworkSpec& spec) {
  if (!is_identifier(spec.name)) throw SpecError("merged network name is not an identifier");
  if (spec.nodes.empty()) throw SpecError("merged network has no nodes");
  std::set<std::string> ids;
  for (const auto& node : spec.nodes) {
    if (node.id == kInputId || !is_identifier(node.id))
      throw SpecError("invalid node id '" + node.id + "'");
    if (!ids.insert(node.id).second) throw SpecError("duplicate node id '" + node.id + "'");
    detail::check_layer(node.op);
  }
  const auto resolved = spec.resolve();

  if (spec.output_feeders.empty()) throw SpecError("nothing feeds the output");
  std::vector<const MergedNode*> feeders;
  for (const auto& f : spec.output_feeders) {
    const int idx = spec.find(f);
    if (idx < 0) throw SpecError("output fed by unknown node '" + f + "'");
    feeders.push_back(&spec.nodes[idx]);
  }
  const int n = static_cast<int>(feeders.size());
  const Shape3 first = resolved[spec.find(spec.output_feeders.front())].out;
  for (const auto& f : spec.output_feeders) {
    const Shape3 s = resolved[spec.find(f)].out;
    if (s.channels != first.channels)
      throw ShapeError("output feeders disagree on output arity");
  }
  const int p = first.channels;
  (void)spec.output_shape();

  std::visit(overloaded{
                 [&](const ConvMerge& m) {
                   if (m.kernel <= 0 || m.kernel % 2 == 0)
                     throw SpecError("output-merge kernel must be odd and positive");
                   for (const auto* f : feeders)
                     if (is_dense(f->op))
                       throw SpecError("conv output merge fed by dense node '" + f->id + "'");
                   if (m.in_channels != n * p || m.out_channels != p)
                     throw ShapeError("conv output merge must map N*p=" + std::to_string(n * p) +
                                      " channels to p=" + std::to_string(p));
                 },
                 [&](const DenseMerge& m) {
                   for (const auto* f : feeders)
                     if (!is_dense(f->op))
                       throw SpecError("dense output merge fed by non-dense node '" + f->id + "'");
                   if (m.in_units != p * n || m.out_units != p)
                     throw ShapeError("dense output merge must map p*N=" + std::to_string(n * p) +
                                      " units to p=" + std::to_string(p));
                 },
                 [&](const Passthrough&) {
                   if (n != 1) throw SpecError("passthrough output needs exactly one feeder");
                 },
             },
             spec.output_merge);
}

std::int64_t count_params(const MergedNetworkSpec& spec, int input_channels) {
  if (input_channels <= 0) throw SpecError("input_channels must be positive");
  MergedNetworkSpec adjusted = spec;
  adjusted.input.channels = input_channels;
  const auto resolved = adjusted.resolve();
  std::int64_t total = 0;
  for (std::size_t i = 0; i < adjusted.nodes.size(); ++i)
    total += layer_params(adjusted.nodes[i].op, resolved[i].in);
  total += std::visit(
      overloaded{
          [](const ConvMerge& m) -> std::int64_t {
            return std::int64_t{m.kernel} * m.kernel * m.in_channels * m.out_channels + m.out_channels;
          },
          [](const DenseMerge& m) -> std::int64_t {
            return std::int64_t{m.in_units} * m.out_units + m.out_units;
          },
          [](const Passthrough&) -> std::int64_t { return 0; },
      },
      adjusted.output_merge);
  return total;
}

void MergeOptions::validate() const {
  if (target_params < 0) throw SpecError("target_params must be nonnegative");
  if (!(parity_tolerance > 0.0 && parity_tolerance < 1.0))
    throw SpecError("parity_tolerance must lie in (0, 1)");
  if (output_merge_kernel <= 0 || output_merge_kernel % 2 == 0)
    throw SpecError("output_merge_kernel must be odd and positive");
}

namespace {

int min_origin(const GraphNode& node) {
  return node.origins.empty() ? INT_MAX : node.origins.front();
}

// Feeder order at concatenation points: (lowest origin, depth, name).
std::vector<std::string> ordered_feeders(const ArchGraph& g, NodeId consumer) {
  auto preds = g.predecessors(consumer);
  std::sort(preds.begin(), preds.end(), [&](NodeId a, NodeId b) {
    auto key = [&](NodeId id) {
      if (id == kInputNode) return std::tuple{-1, 0, std::string(kInputId)};
      const auto& n = g.nodes[id];
      return std::tuple{min_origin(n), n.label.depth, n.name};
    };
    return key(a) < key(b);
  });
  std::vector<std::string> names;
  for (NodeId id : preds) names.push_back(g.node_name(id));
  return names;
}

}  // namespace

MergedNetworkSpec graph_to_network(const ArchGraph& g, const WidthMap& widths,
                                   const MergeOptions& opts, std::string name) {
  opts.validate();
  if (auto violations = validate_graph(g); !violations.empty())
    throw SpecError("invalid graph: " + violations.front());
  std::set<NodeLabel> labels;
  for (const auto& node : g.nodes)
    if (!labels.insert(node.label).second)
      throw SpecError("graph is not contracted: label " + to_string(node.label) + " repeats");

  std::vector<NodeId> order(g.nodes.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](NodeId a, NodeId b) {
    const auto& na = g.nodes[a];
    const auto& nb = g.nodes[b];
    return std::tuple{na.label.depth, min_origin(na), na.name} <
           std::tuple{nb.label.depth, min_origin(nb), nb.name};
  });

  MergedNetworkSpec spec;
  spec.name = std::move(name);
  spec.input = g.input;
  for (NodeId id : order) {
    const auto& gn = g.nodes[id];
    MergedNode node;
    node.id = gn.name;
    node.op = gn.layer;
    if (!is_pool(gn.layer)) {
      auto it = widths.find(gn.name);
      if (it == widths.end()) throw SpecError("missing width for node '" + gn.name + "'");
      if (it->second < 1) throw SpecError("width for node '" + gn.name + "' must be positive");
      node.op = with_width(gn.layer, it->second);
    }
    node.feeders = ordered_feeders(g, id);
    spec.nodes.push_back(std::move(node));
  }
  spec.output_feeders = ordered_feeders(g, kOutputNode);

  const int n = static_cast<int>(spec.output_feeders.size());
  if (n == 1) {
    spec.output_merge = Passthrough{};
  } else {
    const auto resolved = spec.resolve();
    int dense = 0;
    int p = -1;
    for (const auto& f : spec.output_feeders) {
      const int idx = spec.find(f);
      dense += is_dense(spec.nodes[idx].op) ? 1 : 0;
      const int c = resolved[idx].out.channels;
      if (p >= 0 && c != p)
        throw ShapeError("output feeders disagree on output arity (" + std::to_string(p) +
                         " vs " + std::to_string(c) + ")");
      p = c;
    }
    if (dense != 0 && dense != n)
      throw SpecError("mixed dense and convolutional outputs cannot be merged");
    if (dense == n)
      spec.output_merge = DenseMerge{p * n, p};
    else
      spec.output_merge = ConvMerge{opts.output_merge_kernel, n * p, p};
    // The merge layer owns the output nonlinearity; feeders hand it logits.
    for (const auto& f : spec.output_feeders) {
      auto& op = spec.nodes[static_cast<std::size_t>(spec.find(f))].op;
      if (auto* c = std::get_if<ConvLayer>(&op)) c->activation = Activation::None;
      if (auto* d = std::get_if<DenseLayer>(&op)) d->activation = Activation::None;
    }
  }
  check_merged(spec);
  return spec;
}

namespace {

int output_arity(const NetworkSpec& spec) { return spec.shapes().back().channels; }

struct WidthCandidate {
  double factor = 1.0;
  WidthMap widths;
  std::int64_t count = 0;
};

}  // namespace

WidthMap solve_widths(const ArchGraph& g, const std::vector<NetworkSpec>& parents,
                      const MergeOptions& opts) {
  opts.validate();
  if (parents.empty()) throw SpecError("solve_widths needs at least one parent");
  const int p = output_arity(parents.front());
  for (const auto& parent : parents)
    if (output_arity(parent) != p)
      throw SpecError("parents disagree on output arity");

  double target = static_cast<double>(opts.target_params);
  if (target == 0.0) {
    double sum = 0.0;
    for (const auto& parent : parents) sum += static_cast<double>(count_params(parent));
    target = sum / static_cast<double>(parents.size());
  }

  std::set<std::string> pinned;
  for (NodeId id : g.predecessors(kOutputNode))
    if (id >= 0) pinned.insert(g.nodes[id].name);

  auto build = [&](double factor) {
    WidthCandidate c;
    c.factor = factor;
    for (const auto& node : g.nodes) {
      if (is_pool(node.layer)) continue;
      int w = p;
      if (!pinned.count(node.name))
        w = std::max(1, static_cast<int>(std::lround(node.out_channels() * factor)));
      c.widths[node.name] = w;
    }
    c.count = count_params(graph_to_network(g, c.widths, opts));
    return c;
  };

  constexpr double kMinFactor = 1.0 / 64.0;
  constexpr double kMaxFactor = 64.0;
  std::vector<WidthCandidate> candidates{build(1.0)};
  WidthCandidate lo = build(kMinFactor);
  WidthCandidate hi = build(kMaxFactor);
  if (static_cast<double>(lo.count) >= target) {
    candidates.push_back(lo);
  } else if (static_cast<double>(hi.count) <= target) {
    candidates.push_back(hi);
  } else {
    // count is nondecreasing in the factor: keep count(lo) < target <= count(hi).
    for (int iter = 0; iter < 60; ++iter) {
      WidthCandidate mid = build(0.5 * (lo.factor + hi.factor));
      if (static_cast<double>(mid.count) < target)
        lo = std::move(mid);
      else
        hi = std::move(mid);
      if (hi.factor - lo.factor < 1e-12) break;
    }
    candidates.push_back(lo);
    candidates.push_back(hi);
  }

  const WidthCandidate* best = &candidates.front();
  auto error = [&](const WidthCandidate& c) {
    return std::abs(static_cast<double>(c.count) - target);
  };
  for (const auto& c : candidates)
    if (error(c) < error(*best)) best = &c;

  if (error(*best) / target > opts.parity_tolerance)
    throw InfeasibleParity(best->count, target, opts.parity_tolerance);
  return best->widths;
}

MergedNetworkSpec spdnn_merge(const std::vector<NetworkSpec>& parents,
                              const MergeOptions& opts) {
  opts.validate();
  if (parents.empty()) throw SpecError("merge needs at least one parent network");
  for (const auto& parent : parents)
    if (!(parent.input() == parents.front().input()))
      throw SpecError("mismatched parent input shapes: '" + parent.name() + "' vs '" +
                      parents.front().name() + "'");

  std::vector<ArchGraph> graphs;
  for (const auto& parent : parents) graphs.push_back(network_to_graph(parent));
  const ArchGraph contracted = contract(parallel_compose(graphs));
  const WidthMap widths = solve_widths(contracted, parents, opts);
  return graph_to_network(contracted, widths, opts);
}

MergedNetworkSpec to_merged(const NetworkSpec& spec) {
  const ArchGraph g = contract(network_to_graph(spec));
  WidthMap widths;
  for (const auto& node : g.nodes)
    if (!is_pool(node.layer)) widths[node.name] = node.out_channels();
  return graph_to_network(g, widths, MergeOptions{}, spec.name());
}

std::string parity_warning(const std::vector<std::int64_t>& parent_counts) {
  if (parent_counts.size() < 2) return {};
  const auto [mn, mx] = std::minmax_element(parent_counts.begin(), parent_counts.end());
  const double mean =
      std::accumulate(parent_counts.begin(), parent_counts.end(), 0.0) /
      static_cast<double>(parent_counts.size());
  const double spread = static_cast<double>(*mx - *mn) / mean;
  if (spread <= 0.25) return {};
  std::ostringstream out;
  out << "warning: parent parameter counts differ by " << std::lround(spread * 100.0)
      << "% of their mean; parity against the mean may not match every parent";
  return out.str();
}

namespace {

std::string join(const std::vector<std::string>& parts) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += ",";
    out += parts[i];
  }
  return out;
}

std::vector<std::string> split_list(const std::string& text, int line, const std::string& token) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (true) {
    auto comma = text.find(',', pos);
    std::string part = text.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    if (part.empty()) throw ParseError(line, token, "empty identifier in list");
    out.push_back(part);
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

}  // namespace

std::string serialize_merged(const MergedNetworkSpec& spec) {
  std::ostringstream out;
  out << "network " << spec.name << "\n";
  out << "input " << spec.input.height << " " << spec.input.width << " " << spec.input.channels
      << "\n";
  for (const auto& node : spec.nodes)
    out << "node " << node.id << " op=" << detail::serialize_layer(node.op)
        << " from=" << join(node.feeders) << "\n";
  out << "outmerge "
      << std::visit(overloaded{
                        [](const ConvMerge& m) {
                          std::string s = "kind=conv k=" + std::to_string(m.kernel);
                          if (m.activation != Activation::Sigmoid)
                            s += " act=" + std::string(to_string(m.activation));
                          return s;
                        },
                        [](const DenseMerge& m) {
                          std::string s = "kind=dense";
                          if (m.activation != Activation::Sigmoid)
                            s += " act=" + std::string(to_string(m.activation));
                          return s;
                        },
                        [](const Passthrough&) { return std::string("kind=pass"); },
                    },
                    spec.output_merge)
      << " from=" << join(spec.output_feeders) << "\n";
  return out.str();
}

MergedNetworkSpec parse_merged(std::string_view text) {
  const auto lines = detail::tokenize(text);
  if (lines.size() < 2) throw ParseError(1, "", "expected 'network NAME' and 'input H W C'");
  const auto& head = lines[0];
  if (head.tokens[0] != "network" || head.tokens.size() != 2 || !is_identifier(head.tokens[1]))
    throw ParseError(head.number, head.tokens[0], "expected 'network NAME'");
  const auto& in = lines[1];
  if (in.tokens[0] != "input" || in.tokens.size() != 4)
    throw ParseError(in.number, in.tokens[0], "expected 'input H W C'");

  MergedNetworkSpec spec;
  spec.name = head.tokens[1];
  spec.input = {detail::parse_positive_int(in.tokens[1], in.number, in.tokens[1]),
                detail::parse_positive_int(in.tokens[2], in.number, in.tokens[2]),
                detail::parse_positive_int(in.tokens[3], in.number, in.tokens[3])};

  bool have_outmerge = false;
  int outmerge_line = 0;
  std::string merge_kind;
  int merge_kernel = 1;
  Activation merge_act = Activation::Sigmoid;

  for (std::size_t i = 2; i < lines.size(); ++i) {
    const auto& line = lines[i];
    const auto& toks = line.tokens;
    if (have_outmerge)
      throw ParseError(line.number, toks[0], "nothing may follow the outmerge line");
    if (toks.back().rfind("from=", 0) != 0)
      throw ParseError(line.number, toks.back(), "line must end with from=ID[,ID...]");
    const auto from = split_list(toks.back().substr(5), line.number, toks.back());

    if (toks[0] == "node") {
      if (toks.size() < 4 || toks[2].rfind("op=", 0) != 0)
        throw ParseError(line.number, toks[0], "expected 'node ID op=KIND ... from=...'");
      if (!is_identifier(toks[1]) || toks[1] == kInputId)
        throw ParseError(line.number, toks[1], "invalid node id");
      if (spec.find(toks[1]) >= 0) throw ParseError(line.number, toks[1], "duplicate node id");
      std::vector<std::string> attrs(toks.begin() + 3, toks.end() - 1);
      MergedNode node;
      node.id = toks[1];
      node.op = detail::parse_layer(toks[2].substr(3), attrs, line.number);
      node.feeders = from;
      for (const auto& f : from)
        if (f != kInputId && spec.find(f) < 0)
          throw ParseError(line.number, f, "feeder is not defined above");
      spec.nodes.push_back(std::move(node));
    } else if (toks[0] == "outmerge") {
      have_outmerge = true;
      outmerge_line = line.number;
      spec.output_feeders = from;
      for (std::size_t t = 1; t + 1 < toks.size(); ++t) {
        auto [key, value] = detail::split_attr(toks[t], line.number);
        if (key == "kind") {
          merge_kind = value;
        } else if (key == "k") {
          merge_kernel = detail::parse_positive_int(value, line.number, toks[t]);
        } else if (key == "act") {
          try {
            merge_act = parse_activation(value);
          } catch (const SpecError& e) {
            throw ParseError(line.number, toks[t], e.what());
          }
        } else {
          throw ParseError(line.number, toks[t], "unknown outmerge attribute");
        }
      }
      for (const auto& f : from)
        if (spec.find(f) < 0) throw ParseError(line.number, f, "output feeder is not a node");
    } else {
      throw ParseError(line.number, toks[0], "expected 'node' or 'outmerge'");
    }
  }
  if (!have_outmerge) throw ParseError(lines.back().number, "", "missing outmerge line");

  try {
    const auto resolved = spec.resolve();
    const int n = static_cast<int>(spec.output_feeders.size());
    const int p = resolved[spec.find(spec.output_feeders.front())].out.channels;
    if (merge_kind == "conv") {
      if (merge_kernel % 2 == 0)
        throw ParseError(outmerge_line, "k=" + std::to_string(merge_kernel),
                         "output-merge kernel must be odd");
      spec.output_merge = ConvMerge{merge_kernel, n * p, p, merge_act};
    } else if (merge_kind == "dense") {
      spec.output_merge = DenseMerge{p * n, p, merge_act};
    } else if (merge_kind == "pass") {
      spec.output_merge = Passthrough{};
    } else {
      throw ParseError(outmerge_line, "kind=" + merge_kind, "kind must be conv, dense or pass");
    }
    check_merged(spec);
  } catch (const SpecError& e) {
    throw ParseError(outmerge_line, "", e.what());
  } catch (const ShapeError& e) {
    throw ParseError(outmerge_line, "", e.what());
  }
  return spec;
}

MergedNetworkSpec parse_any_network(std::string_view text) {
  for (const auto& line : detail::tokenize(text))
    if (line.tokens[0] == "node" || line.tokens[0] == "outmerge") return parse_merged(text);
  return to_merged(parse_network(text));
}

}  // namespace spdnn
