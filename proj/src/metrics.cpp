#include "spdnn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "spdnn/errors.hpp"

namespace spdnn {

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& o) {
  tp += o.tp;
  tn += o.tn;
  fp += o.fp;
  fn += o.fn;
  return *this;
}

ConfusionCounts confusion_from_masks(const float* prediction, const std::uint8_t* truth,
                                     std::size_t pixels, double threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0))
    throw SpecError("threshold must lie in [0, 1]");
  ConfusionCounts c;
  for (std::size_t i = 0; i < pixels; ++i) {
    const bool predicted = static_cast<double>(prediction[i]) >= threshold;
    const bool actual = truth[i] != 0;
    if (predicted)
      ++(actual ? c.tp : c.fp);
    else
      ++(actual ? c.fn : c.tn);
  }
  return c;
}

ConfusionCounts confusion_from_masks(const std::vector<float>& prediction,
                                     const std::vector<std::uint8_t>& truth, double threshold) {
  if (prediction.size() != truth.size())
    throw ShapeError("prediction has " + std::to_string(prediction.size()) +
                     " pixels, truth has " + std::to_string(truth.size()));
  return confusion_from_masks(prediction.data(), truth.data(), prediction.size(), threshold);
}

std::string_view metric_name(Metric m) {
  static constexpr std::array<std::string_view, kMetricCount> names = {
      "accuracy", "sensitivity", "specificity", "precision",    "npv",       "fpr",
      "fnr",      "fdr",         "f1",          "mcc",          "informedness", "markedness"};
  return names[static_cast<std::size_t>(m)];
}

const std::array<Metric, kMetricCount>& all_metrics() {
  static const std::array<Metric, kMetricCount> all = {
      Metric::Accuracy, Metric::Sensitivity, Metric::Specificity, Metric::Precision,
      Metric::Npv,      Metric::Fpr,         Metric::Fnr,         Metric::Fdr,
      Metric::F1,       Metric::Mcc,         Metric::Informedness, Metric::Markedness};
  return all;
}

std::pair<double, double> metric_range(Metric m) {
  switch (m) {
    case Metric::Mcc:
    case Metric::Informedness:
    case Metric::Markedness: return {-1.0, 1.0};
    default: return {0.0, 1.0};
  }
}

MetricReport compute_metrics(const ConfusionCounts& c) {
  if (c.total() == 0) throw SpecError("confusion counts are empty");
  const double tp = c.tp, tn = c.tn, fp = c.fp, fn = c.fn;
  MetricReport r;
  auto set = [&](Metric m, double value, bool flagged) {
    r.values[static_cast<std::size_t>(m)] = flagged ? 0.0 : value;
    r.zero_denominator[static_cast<std::size_t>(m)] = flagged;
  };
  auto ratio = [&](Metric m, double num, double den) {
    set(m, den > 0 ? num / den : 0.0, den == 0);
  };

  ratio(Metric::Accuracy, tp + tn, tp + tn + fp + fn);
  ratio(Metric::Sensitivity, tp, tp + fn);
  ratio(Metric::Specificity, tn, tn + fp);
  ratio(Metric::Precision, tp, tp + fp);
  ratio(Metric::Npv, tn, tn + fn);
  ratio(Metric::F1, 2 * tp, 2 * tp + fp + fn);

  const double sens = r[Metric::Sensitivity], spec = r[Metric::Specificity];
  const double prec = r[Metric::Precision], npv = r[Metric::Npv];
  const bool sens_z = r.flagged(Metric::Sensitivity), spec_z = r.flagged(Metric::Specificity);
  const bool prec_z = r.flagged(Metric::Precision), npv_z = r.flagged(Metric::Npv);
  set(Metric::Fpr, 1.0 - spec, spec_z);
  set(Metric::Fnr, 1.0 - sens, sens_z);
  set(Metric::Fdr, 1.0 - prec, prec_z);
  set(Metric::Informedness, sens + spec - 1.0, sens_z || spec_z);
  set(Metric::Markedness, prec + npv - 1.0, prec_z || npv_z);

  const double den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
  set(Metric::Mcc, den > 0 ? (tp * tn - fp * fn) / std::sqrt(den) : 0.0, den == 0);
  return r;
}

AggregateReport aggregate_report(const std::vector<MetricReport>& per_image) {
  if (per_image.empty()) throw SpecError("no per-image reports to aggregate");
  AggregateReport a;
  a.images = per_image.size();
  for (std::size_t k = 0; k < kMetricCount; ++k) {
    const auto [lo, hi] = metric_range(all_metrics()[k]);
    Histogram& h = a.histograms[k];
    h.lo = lo;
    h.hi = hi;
    double sum = 0;
    a.min[k] = a.max[k] = per_image.front().values[k];
    for (const auto& r : per_image) {
      const double v = r.values[k];
      sum += v;
      a.min[k] = std::min(a.min[k], v);
      a.max[k] = std::max(a.max[k], v);
      a.zero_denominator_count[k] += r.zero_denominator[k];
      const double t = (v - lo) / (hi - lo) * kHistogramBins;
      const int bin = std::clamp(static_cast<int>(std::floor(t)), 0, kHistogramBins - 1);
      ++h.bins[static_cast<std::size_t>(bin)];
    }
    a.mean[k] = sum / static_cast<double>(per_image.size());
  }
  return a;
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

std::string metrics_csv(const AggregateReport& report) {
  std::string out = "metric,mean,min,max,zero_denominator_count\n";
  for (std::size_t k = 0; k < kMetricCount; ++k) {
    out += std::string(metric_name(all_metrics()[k])) + "," + fmt(report.mean[k]) + "," +
           fmt(report.min[k]) + "," + fmt(report.max[k]) + "," +
           std::to_string(report.zero_denominator_count[k]) + "\n";
  }
  return out;
}

std::string per_image_csv(const std::vector<MetricReport>& per_image) {
  std::string out = "image";
  for (Metric m : all_metrics()) out += "," + std::string(metric_name(m));
  out += "\n";
  for (std::size_t i = 0; i < per_image.size(); ++i) {
    out += std::to_string(i);
    for (double v : per_image[i].values) out += "," + fmt(v);
    out += "\n";
  }
  return out;
}

std::string histogram_csv(const AggregateReport& report) {
  std::string out = "metric,bin,lo,hi,count\n";
  for (std::size_t k = 0; k < kMetricCount; ++k) {
    const Histogram& h = report.histograms[k];
    const double width = (h.hi - h.lo) / kHistogramBins;
    for (int b = 0; b < kHistogramBins; ++b)
      out += std::string(metric_name(all_metrics()[k])) + "," + std::to_string(b) + "," +
             fmt(h.lo + b * width) + "," + fmt(h.lo + (b + 1) * width) + "," +
             std::to_string(h.bins[static_cast<std::size_t>(b)]) + "\n";
  }
  return out;
}

}  // namespace spdnn
