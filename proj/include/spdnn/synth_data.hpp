#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace spdnn {

/// Single-channel images in [0, 1] with binary masks, stored back to back in
/// row-major order.
struct SegmentationSet {
  int height = 0;
  int width = 0;
  std::vector<float> images;
  std::vector<std::uint8_t> masks;

  std::size_t size() const;
  std::size_t pixels() const { return static_cast<std::size_t>(height) * width; }
  const float* image(std::size_t i) const { return images.data() + i * pixels(); }
  const std::uint8_t* mask(std::size_t i) const { return masks.data() + i * pixels(); }

  friend bool operator==(const SegmentationSet&, const SegmentationSet&) = default;
};

struct Split {
  std::vector<std::size_t> train, val, test;
};

inline constexpr std::uint64_t kSplitSeed = 0x53504c4954ULL;  // "SPLIT"

struct GenerateOptions {
  std::optional<double> noise_sigma;  // overrides the per-sample draw
};

/// Annulus ("iris") images: a bright ring around a dark pupil on a
/// background with a linear brightness gradient, plus Gaussian noise. The
/// mask is the exact ring. Every mask covers between 2% and 50% of the image.
SegmentationSet generate(std::uint64_t seed, int count, int size,
                         const GenerateOptions& options = {});

/// Seeded shuffle of [0, count) cut into train / val / test. Validation and
/// test each get floor(count * fraction), train the rest.
Split make_split(std::size_t count, std::uint64_t seed = kSplitSeed, double val_fraction = 0.2,
                 double test_fraction = 0.2);

// File layout: "SPDD" | u8 version (1) | u32 count | u32 H | u32 W |
// count*H*W f32 images | count*H*W u8 masks. Little-endian throughout.
void save_set(std::ostream& out, const SegmentationSet& set);
SegmentationSet load_set(std::istream& in);

}  // namespace spdnn
