#include <map>
#include <set>

#include "doctest.h"
#include "generators.hpp"
#include "spdnn/errors.hpp"
#include "spdnn/graph.hpp"

using namespace spdnn;

namespace {

NetworkSpec chain(const std::string& name, std::vector<int> kernels, int width = 4) {
  std::vector<LayerSpec> layers;
  for (int k : kernels) layers.push_back(ConvLayer{k, width, true});
  return NetworkSpec(name, {16, 16, 1}, layers);
}

ArchGraph merge_graphs(const std::vector<NetworkSpec>& parents) {
  std::vector<ArchGraph> graphs;
  for (const auto& p : parents) graphs.push_back(network_to_graph(p));
  return contract(parallel_compose(graphs));
}

}  // namespace

TEST_CASE("signature alphabet") {
  CHECK(is_valid_signature("7C"));
  CHECK(is_valid_signature("11C"));
  CHECK(is_valid_signature("F"));
  CHECK(is_valid_signature("P2"));
  CHECK_FALSE(is_valid_signature("C"));
  CHECK_FALSE(is_valid_signature("P"));
  CHECK_FALSE(is_valid_signature("7F"));
  CHECK(to_string(NodeLabel{"9C", 4}) == "(9C,4)");
}

TEST_CASE("network_to_graph builds labeled chains") {
  SUBCASE("network 1") {
    const auto g = network_to_graph(testing::load_shipped("net1.net"));
    REQUIRE(g.nodes.size() == 8);
    for (int i = 0; i < 8; ++i) CHECK(g.nodes[i].label == NodeLabel{"7C", i + 1});
    CHECK(g.edges.size() == 9);
    CHECK(validate_graph(g).empty());
  }
  SUBCASE("single layer") {
    const auto g = network_to_graph(chain("one", {3}));
    REQUIRE(g.nodes.size() == 1);
    CHECK(g.nodes[0].label == NodeLabel{"3C", 1});
    CHECK(g.edges == std::set<Edge>{{kInputNode, 0}, {0, kOutputNode}});
  }
  SUBCASE("network 3 schedule") {
    const auto g = network_to_graph(testing::load_shipped("net3.net"));
    const std::vector<NodeLabel> expected{{"3C", 1}, {"5C", 2}, {"7C", 3}, {"9C", 4}, {"11C", 5}};
    REQUIRE(g.nodes.size() == expected.size());
    for (std::size_t i = 0; i < expected.size(); ++i) CHECK(g.nodes[i].label == expected[i]);
  }
  SUBCASE("pool and dense signatures") {
    const auto g = network_to_graph(
        NetworkSpec("m", {8, 8, 1}, {ConvLayer{3, 2}, MaxPoolLayer{2}, DenseLayer{4}}));
    CHECK(g.nodes[1].label == NodeLabel{"P2", 2});
    CHECK(g.nodes[2].label == NodeLabel{"F", 3});
  }
}

TEST_CASE("parallel_compose") {
  SUBCASE("net2 + net3 keeps all nodes") {
    const auto g = parallel_compose({network_to_graph(testing::load_shipped("net2.net")),
                                     network_to_graph(testing::load_shipped("net3.net"))});
    CHECK(g.nodes.size() == 11);
    CHECK(validate_graph(g).empty());
    CHECK(g.predecessors(kOutputNode).size() == 2);
    CHECK(g.successors(kInputNode).size() == 2);
    CHECK(g.nodes[6].origins == std::vector<int>{1});
  }
  SUBCASE("single graph is unchanged") {
    const auto g = network_to_graph(testing::load_shipped("net1.net"));
    CHECK(structurally_equal(parallel_compose({g}), g));
  }
  SUBCASE("empty list") { CHECK_THROWS_AS(parallel_compose({}), SpecError); }
  SUBCASE("input mismatch") {
    auto a = network_to_graph(chain("a", {3}));
    auto b = network_to_graph(NetworkSpec("b", {8, 8, 1}, {ConvLayer{3, 1}}));
    CHECK_THROWS_AS(parallel_compose({a, b}), SpecError);
  }
}

TEST_CASE("contract") {
  SUBCASE("identical chains collapse to one") {
    const auto a = network_to_graph(chain("a", {3, 5, 7}));
    const auto c = contract(parallel_compose({a, a}));
    CHECK(c.nodes.size() == 3);
    CHECK(c.edges.size() == 4);
    for (const auto& n : c.nodes) CHECK(n.origins == std::vector<int>{0, 1});
  }
  SUBCASE("shared first layer forks") {
    const auto c = merge_graphs({chain("a", {3, 3}), chain("b", {3, 5})});
    REQUIRE(c.nodes.size() == 3);
    CHECK(c.nodes[0].label == NodeLabel{"3C", 1});
    CHECK(c.successors(0).size() == 2);
    CHECK(c.predecessors(kOutputNode).size() == 2);
    CHECK(validate_graph(c).empty());
  }
  SUBCASE("the three shipped parents") {
    const std::vector<NetworkSpec> parents{testing::load_shipped("net1.net"),
                                           testing::load_shipped("net2.net"),
                                           testing::load_shipped("net3.net")};
    const auto c = merge_graphs(parents);
    const auto oracle = testing::label_groups(parents);
    CHECK(oracle.size() == 17);
    CHECK(c.nodes.size() == oracle.size());

    std::set<std::string> shared;
    for (const auto& n : c.nodes)
      if (n.origins.size() > 1) shared.insert(to_string(n.label));
    CHECK(shared == std::set<std::string>{"(3C,1)", "(7C,3)"});
    for (const auto& n : c.nodes)
      CHECK(oracle.at({n.label.op_signature, n.label.depth}) ==
            std::set<int>(n.origins.begin(), n.origins.end()));
    CHECK(validate_graph(c).empty());

    // (7C,3) concatenates net1's (7C,2) and net3's (5C,2).
    const auto& n73 = *std::find_if(c.nodes.begin(), c.nodes.end(),
                                    [](const GraphNode& n) { return n.label == NodeLabel{"7C", 3}; });
    const NodeId id = static_cast<NodeId>(&n73 - c.nodes.data());
    CHECK(c.predecessors(id).size() == 2);
    CHECK(c.successors(id).size() == 2);
    // Merged width is the class maximum, BN kept.
    CHECK(std::get<ConvLayer>(n73.layer).out_channels == 11);
    CHECK(std::get<ConvLayer>(n73.layer).batch_norm);
  }
}

TEST_CASE("validate_graph reports constructed violations") {
  SUBCASE("depth skip") {
    ArchGraph g;
    g.input = {8, 8, 1};
    g.nodes.push_back({{"3C", 1}, ConvLayer{3, 1}, {0}, ""});
    g.nodes.push_back({{"3C", 3}, ConvLayer{3, 1}, {0}, ""});
    assign_node_names(g);
    g.edges = {{kInputNode, 0}, {0, 1}, {1, kOutputNode}};
    const auto v = validate_graph(g);
    REQUIRE(v.size() == 1);
    CHECK(v[0].find("depth") != std::string::npos);
  }
  SUBCASE("orphan node") {
    auto g = network_to_graph(chain("a", {3, 3}));
    g.nodes.push_back({{"5C", 1}, ConvLayer{5, 1}, {0}, ""});
    assign_node_names(g);
    const auto v = validate_graph(g);
    REQUIRE(v.size() == 1);
    CHECK(v[0].find("d1_5C_0") != std::string::npos);
  }
  SUBCASE("cycle") {
    ArchGraph g;
    g.input = {8, 8, 1};
    g.nodes.push_back({{"3C", 1}, ConvLayer{3, 1}, {0}, ""});
    g.nodes.push_back({{"3C", 2}, ConvLayer{3, 1}, {0}, ""});
    assign_node_names(g);
    g.edges = {{kInputNode, 0}, {0, 1}, {1, 0}, {1, kOutputNode}};
    const auto v = validate_graph(g);
    CHECK(std::any_of(v.begin(), v.end(),
                      [](const std::string& s) { return s.find("cycle") != std::string::npos; }));
  }
}

TEST_CASE("property: contraction invariants on random parent sets") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = testing::uniform_int(rng, 1, 4);
    std::vector<NetworkSpec> parents;
    std::vector<ArchGraph> graphs;
    for (int i = 0; i < n; ++i) {
      parents.push_back(testing::random_chain(
          rng, {.max_layers = 5, .max_kernel = 5, .allow_dense = false}));
      graphs.push_back(network_to_graph(parents.back()));
    }
    const auto composed = parallel_compose(graphs);
    const auto c = contract(composed);

    CHECK(validate_graph(c).empty());
    CHECK(c.nodes.size() == testing::label_groups(parents).size());
    CHECK(c.nodes.size() <= composed.nodes.size());
    CHECK(c.edges.size() <= composed.edges.size());
    CHECK(structurally_equal(contract(c), c));
    CHECK(structurally_equal(contract(parallel_compose({graphs[0]})), graphs[0]));
  }
}

TEST_CASE("graph dump is stable and sorted") {
  const auto c = contract(parallel_compose({network_to_graph(chain("a", {3, 3})),
                                            network_to_graph(chain("b", {3, 5}))}));
  CHECK(dump_graph(c) ==
        "d1_3C_0 depth=1 origins=0,1\n"
        "d2_3C_0 depth=2 origins=0\n"
        "d2_5C_0 depth=2 origins=1\n"
        "input -> d1_3C_0\n"
        "d1_3C_0 -> d2_3C_0\n"
        "d1_3C_0 -> d2_5C_0\n"
        "d2_3C_0 -> output\n"
        "d2_5C_0 -> output\n");
}
