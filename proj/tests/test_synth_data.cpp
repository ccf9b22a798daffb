#include <algorithm>
#include <numeric>
#include <set>
#include <sstream>

#include "doctest.h"
#include "spdnn/errors.hpp"
#include "spdnn/synth_data.hpp"

using namespace spdnn;

TEST_CASE("generation is a pure function of the seed") {
  const auto a = generate(42, 20, 32), b = generate(42, 20, 32), c = generate(43, 20, 32);
  CHECK(a == b);
  CHECK_FALSE(a == c);
  CHECK(a.size() == 20);
  CHECK(a.images.size() == 20 * 32 * 32);
}

TEST_CASE("images lie in [0, 1] and masks cover 2%..50%") {
  const auto set = generate(7, 200, 24);
  CHECK(std::all_of(set.images.begin(), set.images.end(),
                    [](float v) { return v >= 0.0f && v <= 1.0f; }));
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto covered = std::accumulate(set.mask(i), set.mask(i) + set.pixels(), std::size_t{0});
    CHECK(covered >= 0.02 * set.pixels());
    CHECK(covered <= 0.5 * set.pixels());
  }
}

TEST_CASE("without noise the ring is the brightest region and equals the mask") {
  GenerateOptions quiet;
  quiet.noise_sigma = 0.0;
  const auto set = generate(9, 50, 32, quiet);
  for (std::size_t i = 0; i < set.size(); ++i) {
    const float* img = set.image(i);
    const float ring = *std::max_element(img, img + set.pixels());
    for (std::size_t p = 0; p < set.pixels(); ++p) CHECK((img[p] >= ring) == (set.mask(i)[p] == 1));
  }
}

TEST_CASE("noise is present by default") {
  GenerateOptions quiet;
  quiet.noise_sigma = 0.0;
  CHECK_FALSE(generate(9, 3, 16) == generate(9, 3, 16, quiet));
}

TEST_CASE("splits") {
  const auto s = make_split(1000);
  CHECK(s.train.size() == 600);
  CHECK(s.val.size() == 200);
  CHECK(s.test.size() == 200);
  std::set<std::size_t> all(s.train.begin(), s.train.end());
  all.insert(s.val.begin(), s.val.end());
  all.insert(s.test.begin(), s.test.end());
  CHECK(all.size() == 1000);
  CHECK(*all.rbegin() == 999);

  const auto again = make_split(1000);
  CHECK(again.train == s.train);
  CHECK(again.test == s.test);
  CHECK_FALSE(make_split(1000, 1).test == s.test);

  const auto small = make_split(10);
  CHECK(small.train.size() == 6);
  CHECK(small.val.size() == 2);
  CHECK(small.test.size() == 2);
  CHECK(make_split(7).test.size() == 1);
  CHECK_THROWS_AS(make_split(10, 1, 0.5, 0.5), SpecError);
}

TEST_CASE("argument checks") {
  CHECK_THROWS_AS(generate(1, 0, 32), SpecError);
  CHECK_THROWS_AS(generate(1, 5, 8), SpecError);
}

TEST_CASE("file round trip and corruption") {
  const auto set = generate(3, 4, 16);
  std::stringstream buf;
  save_set(buf, set);
  const std::string bytes = buf.str();
  CHECK(bytes.size() == 17 + 4 * 256 * 5);
  CHECK(bytes.substr(0, 4) == "SPDD");
  CHECK(bytes[4] == 1);

  SUBCASE("lossless") {
    std::istringstream in(bytes);
    CHECK(load_set(in) == set);
  }
  SUBCASE("wrong magic") {
    std::istringstream in("SPDX" + bytes.substr(4));
    CHECK_THROWS_AS(load_set(in), FormatError);
  }
  SUBCASE("truncated payload names both byte counts") {
    std::istringstream in(bytes.substr(0, bytes.size() - 10));
    try {
      load_set(in);
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("expected 5120 bytes") != std::string::npos);
      CHECK(msg.find("got 5110") != std::string::npos);
    }
  }
  SUBCASE("truncated header") {
    std::istringstream in(bytes.substr(0, 9));
    CHECK_THROWS_AS(load_set(in), FormatError);
  }
  SUBCASE("bad mask byte") {
    std::string bad = bytes;
    bad.back() = 2;
    std::istringstream in(bad);
    CHECK_THROWS_AS(load_set(in), FormatError);
  }
}
