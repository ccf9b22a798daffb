#include "spdnn/synth_data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <iterator>
#include <numbers>
#include <ostream>
#include <random>
#include <tuple>

#include "spdnn/errors.hpp"

namespace spdnn {

static_assert(std::endian::native == std::endian::little,
              "dataset I/O assumes a little-endian host");

std::size_t SegmentationSet::size() const {
  return pixels() == 0 ? 0 : masks.size() / pixels();
}

namespace {

struct Annulus {
  double cx, cy, r_in, r_out;
};

bool in_ring(const Annulus& a, int x, int y) {
  const double dx = x + 0.5 - a.cx, dy = y + 0.5 - a.cy;
  const double d2 = dx * dx + dy * dy;
  return d2 >= a.r_in * a.r_in && d2 <= a.r_out * a.r_out;
}

}  // namespace

SegmentationSet generate(std::uint64_t seed, int count, int size, const GenerateOptions& options) {
  if (count < 1) throw SpecError("count must be positive");
  if (size < 16) throw SpecError("size must be at least 16");
  if (options.noise_sigma && *options.noise_sigma < 0) throw SpecError("negative noise sigma");

  SegmentationSet set;
  set.height = set.width = size;
  const std::size_t px = set.pixels();
  set.images.resize(px * count);
  set.masks.resize(px * count);

  std::mt19937_64 rng(seed);
  auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  const double s = size;

  for (int i = 0; i < count; ++i) {
    float* img = set.images.data() + i * px;
    std::uint8_t* mask = set.masks.data() + i * px;

    // Redraw the geometry until the ring covers 2%..50% of the image.
    Annulus a{};
    std::size_t covered = 0;
    do {
      a.r_out = uniform(0.15, 0.42) * s;
      a.r_in = a.r_out * uniform(0.3, 0.7);
      a.cx = uniform(0.3, 0.7) * s;
      a.cy = uniform(0.3, 0.7) * s;
      covered = 0;
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) covered += in_ring(a, x, y);
    } while (covered < 0.02 * px || covered > 0.5 * px);

    const double ring = uniform(0.6, 0.9);
    const double pupil = uniform(0.0, 0.1);
    const double base = uniform(0.1, 0.3);
    const double slope = uniform(-0.1, 0.1);
    const double angle = uniform(0.0, 2 * std::numbers::pi);
    const double sigma = options.noise_sigma ? *options.noise_sigma : uniform(0.05, 0.2);
    std::normal_distribution<double> noise(0.0, 1.0);

    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const double dx = x + 0.5 - a.cx, dy = y + 0.5 - a.cy;
        const bool inside = dx * dx + dy * dy < a.r_in * a.r_in;
        const bool on_ring = in_ring(a, x, y);
        double v;
        if (on_ring)
          v = ring;
        else if (inside)
          v = pupil;
        else
          v = base + slope * ((x / s - 0.5) * std::cos(angle) + (y / s - 0.5) * std::sin(angle));
        if (sigma > 0) v += sigma * noise(rng);
        img[y * size + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        mask[y * size + x] = on_ring ? 1 : 0;
      }
  }
  return set;
}

Split make_split(std::size_t count, std::uint64_t seed, double val_fraction, double test_fraction) {
  if (val_fraction < 0 || test_fraction < 0 || val_fraction + test_fraction >= 1)
    throw SpecError("split fractions must be nonnegative and leave a training share");
  std::vector<std::size_t> order(count);
  for (std::size_t i = 0; i < count; ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  const auto n_val = static_cast<std::size_t>(std::floor(count * val_fraction));
  const auto n_test = static_cast<std::size_t>(std::floor(count * test_fraction));
  const std::size_t n_train = count - n_val - n_test;
  Split split;
  split.train.assign(order.begin(), order.begin() + n_train);
  split.val.assign(order.begin() + n_train, order.begin() + n_train + n_val);
  split.test.assign(order.begin() + n_train + n_val, order.end());
  for (auto* part : {&split.train, &split.val, &split.test}) std::sort(part->begin(), part->end());
  return split;
}

namespace {

constexpr char kMagic[4] = {'S', 'P', 'D', 'D'};
constexpr std::uint8_t kVersion = 1;
constexpr std::size_t kHeaderBytes = 4 + 1 + 3 * 4;

void put_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

}  // namespace

void save_set(std::ostream& out, const SegmentationSet& set) {
  out.write(kMagic, sizeof kMagic);
  out.put(static_cast<char>(kVersion));
  put_u32(out, static_cast<std::uint32_t>(set.size()));
  put_u32(out, static_cast<std::uint32_t>(set.height));
  put_u32(out, static_cast<std::uint32_t>(set.width));
  out.write(reinterpret_cast<const char*>(set.images.data()),
            static_cast<std::streamsize>(set.images.size() * sizeof(float)));
  out.write(reinterpret_cast<const char*>(set.masks.data()),
            static_cast<std::streamsize>(set.masks.size()));
}

SegmentationSet load_set(std::istream& in) {
  char header[kHeaderBytes];
  in.read(header, sizeof header);
  const auto got = static_cast<std::size_t>(in.gcount());
  if (got >= 4 && std::memcmp(header, kMagic, 4) != 0)
    throw FormatError("not a dataset file (bad magic)");
  if (got < kHeaderBytes)
    throw FormatError("truncated header: expected " + std::to_string(kHeaderBytes) +
                      " bytes, got " + std::to_string(got));
  if (static_cast<std::uint8_t>(header[4]) != kVersion)
    throw FormatError("unsupported dataset version " +
                      std::to_string(static_cast<std::uint8_t>(header[4])));
  std::uint32_t dims[3];
  std::memcpy(dims, header + 5, sizeof dims);
  const auto [count, h, w] = std::tuple{dims[0], dims[1], dims[2]};
  if (h == 0 || w == 0) throw FormatError("dataset has an empty image size");

  const std::size_t px = std::size_t{h} * w;
  const std::size_t expected = std::size_t{count} * px * (sizeof(float) + 1);
  std::string payload{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  if (payload.size() != expected)
    throw FormatError((payload.size() < expected ? "truncated payload: expected "
                                                 : "oversized payload: expected ") +
                      std::to_string(expected) + " bytes, got " +
                      std::to_string(payload.size()));

  SegmentationSet set;
  set.height = static_cast<int>(h);
  set.width = static_cast<int>(w);
  set.images.resize(std::size_t{count} * px);
  set.masks.resize(std::size_t{count} * px);
  std::memcpy(set.images.data(), payload.data(), set.images.size() * sizeof(float));
  std::memcpy(set.masks.data(), payload.data() + set.images.size() * sizeof(float),
              set.masks.size());
  for (std::uint8_t m : set.masks)
    if (m > 1) throw FormatError("mask byte outside {0,1}");
  return set;
}

}  // namespace spdnn
