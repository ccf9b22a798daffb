#include "doctest.h"
#include "generators.hpp"
#include "spdnn/arch_ir.hpp"
#include "spdnn/errors.hpp"

using namespace spdnn;

TEST_CASE("minimal network parses") {
  const auto spec = parse_network("network n1\ninput 32 32 1\nconv k=3 c=1 act=sigmoid\n");
  CHECK(spec.name() == "n1");
  CHECK(spec.input() == Shape3{32, 32, 1});
  REQUIRE(spec.layers().size() == 1);
  const auto& conv = std::get<ConvLayer>(spec.layers()[0]);
  CHECK(conv.kernel == 3);
  CHECK(conv.out_channels == 1);
  CHECK_FALSE(conv.batch_norm);
  CHECK(conv.activation == Activation::Sigmoid);
}

TEST_CASE("defaults, comments and blank lines") {
  const auto spec = parse_network(
      "# leading comment\n\nnetwork n   # trailing\ninput 8 8 3\n\n"
      "conv k=5 c=4\nmaxpool w=2\ndense u=3\n");
  REQUIRE(spec.layers().size() == 3);
  CHECK(std::get<ConvLayer>(spec.layers()[0]).activation == Activation::ReLU);
  CHECK(std::get<MaxPoolLayer>(spec.layers()[1]).window == 2);
  CHECK(std::get<DenseLayer>(spec.layers()[2]).units == 3);
  CHECK(spec.shapes().back() == Shape3{1, 1, 3});
}

TEST_CASE("shipped network 1: eight 7x7 convolutions") {
  const auto spec = testing::load_shipped("net1.net");
  REQUIRE(spec.layers().size() == 8);
  for (const auto& layer : spec.layers()) CHECK(std::get<ConvLayer>(layer).kernel == 7);
  CHECK(std::get<ConvLayer>(spec.output_layer()).activation == Activation::Sigmoid);
  CHECK(std::get<ConvLayer>(spec.output_layer()).out_channels == 1);
}

TEST_CASE("parse errors carry line and token") {
  SUBCASE("even kernel") {
    try {
      parse_network("network n\ninput 8 8 1\nconv k=4 c=8\n");
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.line() == 3);
      CHECK(e.token() == "k=4");
    }
  }
  SUBCASE("zero channels") {
    try {
      parse_network("network n\ninput 8 8 1\nconv k=3 c=0\n");
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.token() == "c=0");
    }
  }
  SUBCASE("syntax") {
    CHECK_THROWS_AS(parse_network("net n\ninput 8 8 1\nconv k=3 c=1\n"), ParseError);
    CHECK_THROWS_AS(parse_network("network n\ninput 8 8\nconv k=3 c=1\n"), ParseError);
    CHECK_THROWS_AS(parse_network("network n\ninput 8 8 1\nconv k=3\n"), ParseError);
    CHECK_THROWS_AS(parse_network("network n\ninput 8 8 1\nconv k=3 c=1 c=2\n"), ParseError);
    CHECK_THROWS_AS(parse_network("network n\ninput 8 8 1\nconv k=3 c=1 act=tanh\n"), ParseError);
    CHECK_THROWS_AS(parse_network("network n\ninput 8 8 1\nconv k=3 c=1 bn=yes\n"), ParseError);
    CHECK_THROWS_AS(parse_network("network n\ninput 8 8 1\nlstm u=3\n"), ParseError);
    CHECK_THROWS_AS(parse_network("network n\ninput 8 8 1\n"), ParseError);
    CHECK_THROWS_AS(parse_network(""), ParseError);
  }
  SUBCASE("spatial underflow") {
    try {
      parse_network("network n\ninput 4 4 1\nmaxpool w=2\nmaxpool w=2\nmaxpool w=2\n");
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.line() == 5);
    }
  }
}

TEST_CASE("construction rejects invalid specs") {
  CHECK_THROWS_AS(NetworkSpec("n", {8, 8, 1}, {}), SpecError);
  CHECK_THROWS_AS(NetworkSpec("n", {8, 8, 1}, {ConvLayer{2, 1}}), SpecError);
  CHECK_THROWS_AS(NetworkSpec("n", {8, 8, 1}, {ConvLayer{3, 0}}), SpecError);
  CHECK_THROWS_AS(NetworkSpec("1bad", {8, 8, 1}, {ConvLayer{3, 1}}), SpecError);
  CHECK_THROWS_AS(NetworkSpec("n", {1, 1, 1}, {MaxPoolLayer{2}}), ShapeError);
}

TEST_CASE("shipped files round-trip") {
  for (const char* file : {"net1.net", "net2.net", "net3.net"}) {
    const auto spec = testing::load_shipped(file);
    CHECK(parse_network(serialize_network(spec)) == spec);
  }
}

TEST_CASE("property: parse . serialize is identity on 100 random specs") {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 100; ++i) {
    const auto spec = testing::random_chain(rng, {}, "r" + std::to_string(i));
    const auto text = serialize_network(spec);
    const auto back = parse_network(text);
    CHECK(back == spec);
    CHECK(serialize_network(back) == text);
  }
}

TEST_CASE("count_params direct formula") {
  CHECK(count_params(NetworkSpec("a", {8, 8, 1}, {ConvLayer{3, 8, false}})) == 80);
  CHECK(count_params(NetworkSpec("a", {8, 8, 1}, {ConvLayer{3, 8, true}})) == 96);
  // Dense over a flattened 4x4x2 map: 32*5 + 5.
  CHECK(count_params(NetworkSpec("a", {4, 4, 2}, {DenseLayer{5}})) == 165);
  CHECK(count_params(NetworkSpec("a", {4, 4, 2}, {MaxPoolLayer{2}})) == 0);
  // input_channels override.
  CHECK(count_params(NetworkSpec("a", {8, 8, 1}, {ConvLayer{3, 8, false}}), 3) == 3 * 9 * 8 + 8);
}

TEST_CASE("count_params of the shipped parents against a per-layer tally") {
  // Per-layer tally of net1, worked out by hand:
  //   layer 1   7*7*1*8 + 8 + 2*8  =   416
  //   layers 2-7 (7*7*8*8 + 8 + 2*8) * 6 = 18960
  //   layer 8   7*7*8*1 + 1        =   393
  //                                  19769
  CHECK(count_params(testing::load_shipped("net1.net")) == 19769);
  // net2: 10c + 4(9c^2 + c + 2c) + 9c + 1 with BN on 5 layers, c = 23.
  CHECK(count_params(testing::load_shipped("net2.net")) == 19804);
  // net3: 155c^2 + 142c + 1, c = 11.
  CHECK(count_params(testing::load_shipped("net3.net")) == 20318);
}

TEST_CASE("property: count_params is additive and monotone in out_channels") {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 100; ++i) {
    const auto spec = testing::random_chain(rng, {.allow_dense = false});
    // Additivity: sum of per-layer counts on propagated shapes.
    std::int64_t tally = 0;
    Shape3 shape = spec.input();
    for (const auto& layer : spec.layers()) {
      tally += layer_params(layer, shape);
      shape = propagate_shape(layer, shape);
    }
    CHECK(count_params(spec) == tally);

    for (std::size_t l = 0; l < spec.layers().size(); ++l) {
      if (!is_conv(spec.layers()[l])) continue;
      auto layers = spec.layers();
      auto& conv = std::get<ConvLayer>(layers[l]);
      conv.out_channels += 1;
      CHECK(count_params(NetworkSpec("w", spec.input(), layers)) > count_params(spec));
    }
  }
}

TEST_CASE("property: same padding preserves size, pooling floors by window") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 200; ++i) {
    const int h = testing::uniform_int(rng, 1, 40);
    const int w = testing::uniform_int(rng, 1, 40);
    const Shape3 in{h, w, 3};
    const int k = 2 * testing::uniform_int(rng, 0, 5) + 1;
    CHECK(propagate_shape(ConvLayer{k, 5}, in) == Shape3{h, w, 5});
    const int win = testing::uniform_int(rng, 1, 4);
    if (h >= win && w >= win)
      CHECK(propagate_shape(MaxPoolLayer{win}, in) == Shape3{h / win, w / win, 3});
    else
      CHECK_THROWS_AS(propagate_shape(MaxPoolLayer{win}, in), ShapeError);
  }
}
