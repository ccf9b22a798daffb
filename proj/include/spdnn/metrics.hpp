#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace spdnn {

struct ConfusionCounts {
  std::uint64_t tp = 0, tn = 0, fp = 0, fn = 0;

  std::uint64_t total() const { return tp + tn + fp + fn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o);
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

/// A pixel is predicted positive iff prediction >= threshold. The threshold
/// may be anywhere in [0, 1]; 0 marks every pixel positive.
ConfusionCounts confusion_from_masks(const std::vector<float>& prediction,
                                     const std::vector<std::uint8_t>& truth, double threshold);
ConfusionCounts confusion_from_masks(const float* prediction, const std::uint8_t* truth,
                                     std::size_t pixels, double threshold);

enum class Metric {
  Accuracy,
  Sensitivity,
  Specificity,
  Precision,
  Npv,
  Fpr,
  Fnr,
  Fdr,
  F1,
  Mcc,
  Informedness,
  Markedness,
};
inline constexpr std::size_t kMetricCount = 12;

std::string_view metric_name(Metric m);
const std::array<Metric, kMetricCount>& all_metrics();
/// Valid range: [-1, 1] for mcc, informedness and markedness, else [0, 1].
std::pair<double, double> metric_range(Metric m);

struct MetricReport {
  std::array<double, kMetricCount> values{};
  /// Set where the metric's denominator was zero; its value is then 0.
  std::array<bool, kMetricCount> zero_denominator{};

  double operator[](Metric m) const { return values[static_cast<std::size_t>(m)]; }
  bool flagged(Metric m) const { return zero_denominator[static_cast<std::size_t>(m)]; }
};

/// Textbook definitions. The complements are computed as complements, so
/// fpr = 1 - specificity (and friends) hold exactly in floating point.
MetricReport compute_metrics(const ConfusionCounts& c);

inline constexpr int kHistogramBins = 20;

struct Histogram {
  double lo = 0, hi = 1;
  std::array<std::size_t, kHistogramBins> bins{};
};

struct AggregateReport {
  std::size_t images = 0;
  std::array<double, kMetricCount> mean{}, min{}, max{};
  std::array<std::size_t, kMetricCount> zero_denominator_count{};
  std::array<Histogram, kMetricCount> histograms{};
};

/// Per-metric mean/min/max over images and a 20-bin histogram over the
/// metric's valid range (the top edge falls in the last bin).
AggregateReport aggregate_report(const std::vector<MetricReport>& per_image);

/// "metric,mean,min,max,zero_denominator_count", values to 9 significant digits.
std::string metrics_csv(const AggregateReport& report);
/// "image,<12 metric names>", one row per image.
std::string per_image_csv(const std::vector<MetricReport>& per_image);
/// "metric,bin,lo,hi,count".
std::string histogram_csv(const AggregateReport& report);

}  // namespace spdnn
