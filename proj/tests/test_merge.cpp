#include <cmath>
#include <numeric>

#include "doctest.h"
#include "generators.hpp"
#include "spdnn/errors.hpp"
#include "spdnn/merge.hpp"

using namespace spdnn;

namespace {

std::vector<NetworkSpec> shipped_parents() {
  return {testing::load_shipped("net1.net"), testing::load_shipped("net2.net"),
          testing::load_shipped("net3.net")};
}

double mean_count(const std::vector<NetworkSpec>& parents) {
  double sum = 0;
  for (const auto& p : parents) sum += static_cast<double>(count_params(p));
  return sum / static_cast<double>(parents.size());
}

MergedNetworkSpec renamed(MergedNetworkSpec spec, const std::string& name) {
  spec.name = name;
  return spec;
}

NetworkSpec dense_parent(const std::string& name, int hidden, int p) {
  return NetworkSpec(name, {4, 4, 1},
                     {ConvLayer{3, 2}, DenseLayer{hidden}, DenseLayer{p, Activation::Sigmoid}});
}

}  // namespace

TEST_CASE("single parent merges to itself with passthrough") {
  for (const auto& parent : shipped_parents()) {
    const auto merged = spdnn_merge({parent});
    CHECK(std::holds_alternative<Passthrough>(merged.output_merge));
    CHECK(serialize_merged(renamed(merged, parent.name())) == serialize_merged(to_merged(parent)));
    CHECK(count_params(merged) == count_params(parent));
  }
}

TEST_CASE("identical copies merge to the parent") {
  const auto net1 = testing::load_shipped("net1.net");
  const auto merged = spdnn_merge({net1, net1, net1});
  CHECK(std::holds_alternative<Passthrough>(merged.output_merge));
  CHECK(serialize_merged(renamed(merged, "net1")) == serialize_merged(to_merged(net1)));
}

TEST_CASE("three conv parents use a (1,1,3,1) conv merge") {
  const auto merged = spdnn_merge(shipped_parents());
  CHECK(merged.nodes.size() == 17);
  REQUIRE(std::holds_alternative<ConvMerge>(merged.output_merge));
  const auto& m = std::get<ConvMerge>(merged.output_merge);
  CHECK(m.kernel_shape() == std::array<int, 4>{1, 1, 3, 1});
  CHECK(merged.output_feeders ==
        std::vector<std::string>{"d8_7C_0", "d6_3C_0", "d5_11C_0"});
  // (7C,3) concatenates net1's branch before net3's.
  const auto& n73 = merged.nodes[merged.find("d3_7C_0")];
  CHECK(n73.feeders == std::vector<std::string>{"d2_7C_0", "d2_5C_0"});
  CHECK(merged.output_shape() == Shape3{32, 32, 1});
  // Feeders pass logits; the merge applies the only sigmoid.
  CHECK(m.activation == Activation::Sigmoid);
  for (const auto& f : merged.output_feeders)
    CHECK(std::get<ConvLayer>(merged.nodes[merged.find(f)].op).activation == Activation::None);
  CHECK(std::get<ConvLayer>(merged.nodes[merged.find("d7_7C_0")].op).activation ==
        Activation::ReLU);
}

TEST_CASE("two dense parents with p=4 use a (8,4) dense merge") {
  const auto merged = spdnn_merge({dense_parent("a", 6, 4), dense_parent("b", 6, 4)},
                                  {.parity_tolerance = 0.5});
  // Identical parents contract fully, so force a fork with different widths.
  CHECK(std::holds_alternative<Passthrough>(merged.output_merge));

  const NetworkSpec other(
      "c", {4, 4, 1},
      {ConvLayer{3, 2}, ConvLayer{3, 2}, ConvLayer{3, 2}, DenseLayer{4, Activation::Sigmoid}});
  const auto forked = spdnn_merge({dense_parent("a", 6, 4), other}, {.parity_tolerance = 0.5});
  REQUIRE(std::holds_alternative<DenseMerge>(forked.output_merge));
  CHECK(std::get<DenseMerge>(forked.output_merge).weight_shape() == std::array<int, 2>{8, 4});
  for (const auto& f : forked.output_feeders)
    CHECK(std::get<DenseLayer>(forked.nodes[forked.find(f)].op).activation == Activation::None);
}

TEST_CASE("configurable output-merge kernel") {
  const auto merged = spdnn_merge(shipped_parents(), {.output_merge_kernel = 3});
  CHECK(std::get<ConvMerge>(merged.output_merge).kernel_shape() == std::array<int, 4>{3, 3, 3, 1});
}

TEST_CASE("graph_to_network errors") {
  const auto parents = shipped_parents();
  std::vector<ArchGraph> graphs;
  for (const auto& p : parents) graphs.push_back(network_to_graph(p));
  const auto g = contract(parallel_compose(graphs));

  SUBCASE("missing width") { CHECK_THROWS_AS(graph_to_network(g, {}, {}), SpecError); }
  SUBCASE("uncontracted graph") {
    const auto a = network_to_graph(parents[0]);
    CHECK_THROWS_AS(graph_to_network(parallel_compose({a, a}), {}, {}), SpecError);
  }
  SUBCASE("mixed dense and conv outputs") {
    const NetworkSpec conv_out("a", {4, 4, 1}, {ConvLayer{3, 1, false, Activation::Sigmoid}});
    const NetworkSpec dense_out("b", {4, 4, 1}, {DenseLayer{1, Activation::Sigmoid}});
    CHECK_THROWS_AS(spdnn_merge({conv_out, dense_out}, {.parity_tolerance = 0.9}), SpecError);
  }
  SUBCASE("concat of different spatial sizes") {
    const NetworkSpec a("a", {8, 8, 1}, {MaxPoolLayer{2}, ConvLayer{3, 2}, ConvLayer{3, 1}});
    const NetworkSpec b("b", {8, 8, 1}, {ConvLayer{3, 2}, ConvLayer{3, 2}, ConvLayer{3, 1}});
    CHECK_THROWS_AS(spdnn_merge({a, b}, {.parity_tolerance = 0.9}), ShapeError);
  }
  SUBCASE("mismatched parent inputs") {
    const NetworkSpec a("a", {8, 8, 1}, {ConvLayer{3, 1}});
    const NetworkSpec b("b", {16, 16, 1}, {ConvLayer{3, 1}});
    CHECK_THROWS_AS(spdnn_merge({a, b}), SpecError);
  }
  SUBCASE("bad options") {
    CHECK_THROWS_AS(spdnn_merge(parents, {.parity_tolerance = 0.0}), SpecError);
    CHECK_THROWS_AS(spdnn_merge(parents, {.output_merge_kernel = 2}), SpecError);
  }
}

TEST_CASE("solve_widths") {
  SUBCASE("identical parents keep their widths") {
    const auto net2 = testing::load_shipped("net2.net");
    const auto g = contract(parallel_compose({network_to_graph(net2), network_to_graph(net2)}));
    const auto widths = solve_widths(g, {net2, net2}, {});
    for (const auto& node : g.nodes) CHECK(widths.at(node.name) == node.out_channels());
    CHECK(count_params(graph_to_network(g, widths, {})) == count_params(net2));
  }
  SUBCASE("shipped parents within 10% of their mean") {
    const auto parents = shipped_parents();
    const auto merged = spdnn_merge(parents);
    const double target = mean_count(parents);
    CHECK(std::abs(static_cast<double>(count_params(merged)) - target) / target <= 0.10);
    // Output-adjacent widths pinned to p = 1.
    for (const auto& id : merged.output_feeders)
      CHECK(std::get<ConvLayer>(merged.nodes[merged.find(id)].op).out_channels == 1);
  }
  SUBCASE("explicit target") {
    const auto parents = shipped_parents();
    const auto merged = spdnn_merge(parents, {.target_params = 40000});
    CHECK(std::abs(count_params(merged) - 40000) <= 4000);
  }
  SUBCASE("unreachable tolerance reports the closest count") {
    const auto parents = shipped_parents();
    const double target = mean_count(parents);
    try {
      spdnn_merge(parents, {.parity_tolerance = 1e-9});
      FAIL("expected InfeasibleParity");
    } catch (const InfeasibleParity& e) {
      CHECK(e.best_count() > 0);
      CHECK(e.target() == doctest::Approx(target));
      CHECK(std::abs(static_cast<double>(e.best_count()) - target) / target <= 0.10);
    }
  }
  SUBCASE("fully pinned widths cannot move") {
    const NetworkSpec a("a", {8, 8, 1}, {ConvLayer{3, 1, false, Activation::Sigmoid}});
    const NetworkSpec b("b", {8, 8, 1}, {ConvLayer{5, 1, false, Activation::Sigmoid}});
    CHECK_THROWS_AS(spdnn_merge({a, b}), InfeasibleParity);
  }
}

TEST_CASE("merged format round-trips and rejects malformed input") {
  const auto merged = spdnn_merge(shipped_parents());
  const auto text = serialize_merged(merged);
  const auto back = parse_merged(text);
  CHECK(serialize_merged(back) == text);
  CHECK(back.output_merge == merged.output_merge);
  CHECK(count_params(back) == count_params(merged));
  CHECK(serialize_merged(parse_any_network(text)) == text);

  const auto net1 = testing::load_shipped("net1.net");
  CHECK(serialize_merged(parse_any_network(serialize_network(net1))) ==
        serialize_merged(to_merged(net1)));

  const std::string head = "network m\ninput 8 8 1\n";
  CHECK_THROWS_AS(parse_merged(head + "node a op=conv k=3 c=1 from=b\noutmerge kind=pass from=a\n"),
                  ParseError);
  CHECK_THROWS_AS(parse_merged(head + "node a op=conv k=3 c=1 from=input\n"), ParseError);
  CHECK_THROWS_AS(parse_merged(head + "node a op=conv k=3 c=1 from=input\n"
                                      "node b op=conv k=3 c=1 from=input\n"
                                      "outmerge kind=pass from=a,b\n"),
                  ParseError);
  CHECK_THROWS_AS(parse_merged(head + "node a op=conv k=3 c=1 from=input\n"
                                      "node b op=conv k=3 c=2 from=input\n"
                                      "outmerge kind=conv k=1 from=a,b\n"),
                  ParseError);
  CHECK_THROWS_AS(parse_merged(head + "node a op=conv k=3 c=1 from=input\n"
                                      "outmerge kind=blend from=a\n"),
                  ParseError);
  const auto ok = parse_merged(head +
                               "node a op=conv k=3 c=2 from=input\n"
                               "node b op=conv k=5 c=2 from=input\n"
                               "node c op=conv k=3 c=1 from=a,b\n"
                               "node d op=conv k=1 c=1 from=input,a\n"
                               "outmerge kind=conv k=3 from=c,d\n");
  CHECK(std::get<ConvMerge>(ok.output_merge).kernel_shape() == std::array<int, 4>{3, 3, 2, 1});
  CHECK(ok.resolve()[2].in.channels == 4);
  CHECK(ok.resolve()[3].in.channels == 3);
}

TEST_CASE("property: bookkeeping, merge dimensions and parity on random parents") {
  std::mt19937_64 rng(99);
  int successes = 0;
  for (int trial = 0; trial < 60; ++trial) {
    const int n = testing::uniform_int(rng, 1, 4);
    const int p = testing::uniform_int(rng, 1, 3);
    std::vector<NetworkSpec> parents;
    for (int i = 0; i < n; ++i)
      parents.push_back(testing::random_chain(
          rng, {.min_layers = 2, .max_layers = 5, .max_kernel = 5, .max_width = 10,
                .allow_pool = false, .allow_dense = false, .output_channels = p}));
    MergedNetworkSpec merged;
    try {
      merged = spdnn_merge(parents, {.parity_tolerance = 0.2});
    } catch (const InfeasibleParity&) {
      continue;
    }
    ++successes;
    check_merged(merged);
    const auto resolved = merged.resolve();
    for (std::size_t i = 0; i < merged.nodes.size(); ++i) {
      int sum = 0;
      for (const auto& f : merged.nodes[i].feeders)
        sum += f == kInputId ? merged.input.channels : resolved[merged.find(f)].out.channels;
      CHECK(resolved[i].in.channels == sum);
    }
    const int feeders = static_cast<int>(merged.output_feeders.size());
    if (const auto* m = std::get_if<ConvMerge>(&merged.output_merge))
      CHECK(m->kernel_shape() == std::array<int, 4>{1, 1, feeders * p, p});
    else
      CHECK(feeders == 1);
    const double target = mean_count(parents);
    CHECK(std::abs(static_cast<double>(count_params(merged)) - target) / target <= 0.2);
  }
  CHECK(successes > 0);
}

TEST_CASE("parity warning above 25% spread") {
  CHECK(parity_warning({100, 110, 105}).empty());
  CHECK_FALSE(parity_warning({100, 200}).empty());
  CHECK(parity_warning({100}).empty());
}
