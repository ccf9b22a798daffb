#include "spdnn/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "spdnn/errors.hpp"
#include "spdnn/optim.hpp"

namespace spdnn {

std::string to_string(Precision p) { return p == Precision::F32 ? "f32" : "f64"; }

Precision parse_precision(const std::string& text) {
  if (text == "f32") return Precision::F32;
  if (text == "f64") return Precision::F64;
  throw SpecError("precision must be f32 or f64, got '" + text + "'");
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0) || !std::isfinite(learning_rate))
    throw SpecError("learning rate must be positive");
  if (!(momentum >= 0 && momentum < 1)) throw SpecError("momentum must lie in [0, 1)");
  if (epochs < 1) throw SpecError("epochs must be positive");
  if (batch_size < 1) throw SpecError("batch size must be positive");
}

std::string TrainConfig::describe() const {
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "learning_rate=%.9g\nmomentum=%.9g\nepochs=%d\nbatch_size=%d\nseed=%llu\n"
                "precision=%s\n",
                learning_rate, momentum, epochs, batch_size,
                static_cast<unsigned long long>(seed), to_string(precision).c_str());
  return buf;
}

std::string loss_csv(const std::vector<EpochRecord>& history) {
  std::string out = "epoch,train_loss,val_loss\n";
  char buf[96];
  for (const auto& r : history) {
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g\n", r.epoch, r.train_loss, r.val_loss);
    out += buf;
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> gather_images(const SegmentationSet& set, const std::vector<std::size_t>& idx) {
  Tensor<Scalar> t(static_cast<Index>(idx.size()), 1, set.height, set.width);
  const std::size_t px = set.pixels();
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::transform(set.image(idx[i]), set.image(idx[i]) + px, t.data() + i * px,
                   [](float v) { return static_cast<Scalar>(v); });
  return t;
}

template <typename Scalar>
Tensor<Scalar> gather_masks(const SegmentationSet& set, const std::vector<std::size_t>& idx) {
  Tensor<Scalar> t(static_cast<Index>(idx.size()), 1, set.height, set.width);
  const std::size_t px = set.pixels();
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::transform(set.mask(idx[i]), set.mask(idx[i]) + px, t.data() + i * px,
                   [](std::uint8_t v) { return static_cast<Scalar>(v); });
  return t;
}

namespace {

void check_compatible(const MergedNetworkSpec& spec, const SegmentationSet& data) {
  const Shape3 want{data.height, data.width, 1};
  if (!(spec.input == want))
    throw ShapeError("network input " + std::to_string(spec.input.height) + "x" +
                     std::to_string(spec.input.width) + "x" +
                     std::to_string(spec.input.channels) + " does not match " +
                     std::to_string(data.height) + "x" + std::to_string(data.width) +
                     "x1 images");
  const Shape3 out = spec.output_shape();
  if (!(out == want))
    throw ShapeError("network output " + std::to_string(out.height) + "x" +
                     std::to_string(out.width) + "x" + std::to_string(out.channels) +
                     " does not match " + std::to_string(data.height) + "x" +
                     std::to_string(data.width) + "x1 masks");
}

template <typename Fn>
void for_batches(const std::vector<std::size_t>& order, int batch_size, Fn&& fn) {
  for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(batch_size)) {
    const auto end = std::min(order.size(), at + static_cast<std::size_t>(batch_size));
    fn(std::vector<std::size_t>(order.begin() + at, order.begin() + end));
  }
}

}  // namespace

template <typename Scalar>
double evaluate_loss(const MergedNetworkSpec& spec, const ParameterStore<Scalar>& store,
                     const SegmentationSet& data, const std::vector<std::size_t>& idx,
                     int batch_size) {
  if (idx.empty()) return std::nan("");
  double sum = 0;
  for_batches(idx, batch_size, [&](const std::vector<std::size_t>& b) {
    const auto pass = run_forward(spec, store, gather_images<Scalar>(data, b), Mode::Eval);
    sum += bce_loss(pass.output, gather_masks<Scalar>(data, b)) * static_cast<double>(b.size());
  });
  return sum / static_cast<double>(idx.size());
}

template <typename Scalar>
TrainResult<Scalar> train(const MergedNetworkSpec& spec, const SegmentationSet& data,
                          const Split& split, const TrainConfig& cfg,
                          const EpochCallback& on_epoch) {
  cfg.validate();
  check_compatible(spec, data);
  if (split.train.empty()) throw SpecError("training split is empty");

  TrainResult<Scalar> result{ParameterStore<Scalar>::initialize(spec, cfg.seed), {}};
  auto& store = result.store;
  std::mt19937_64 shuffle_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order = split.train;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const std::string where = "epoch " + std::to_string(epoch);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double sum = 0;
    EpochRecord rec{epoch, 0, 0};
    try {
      for_batches(order, cfg.batch_size, [&](const std::vector<std::size_t>& b) {
        const auto target = gather_masks<Scalar>(data, b);
        const auto pass = run_forward(spec, store, gather_images<Scalar>(data, b), Mode::Train);
        const double loss = bce_loss(pass.output, target);
        if (!std::isfinite(loss)) throw NumericError(where, "non-finite training loss");
        nesterov_step(store, run_backward(spec, store, pass, bce_loss_grad(pass.output, target)),
                      cfg.learning_rate, cfg.momentum);
        commit_running_stats(store, pass);
        sum += loss * static_cast<double>(b.size());
      });
      rec.train_loss = sum / static_cast<double>(order.size());
      rec.val_loss = evaluate_loss(spec, store, data, split.val, cfg.batch_size);
    } catch (const NumericError& e) {
      if (e.where() == where) throw;
      throw NumericError(where, e.what());
    }
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

template <typename Scalar>
std::vector<std::vector<float>> predict(const MergedNetworkSpec& spec,
                                        const ParameterStore<Scalar>& store,
                                        const SegmentationSet& data,
                                        const std::vector<std::size_t>& idx, int batch_size) {
  check_compatible(spec, data);
  std::vector<std::vector<float>> out;
  for_batches(idx, batch_size, [&](const std::vector<std::size_t>& b) {
    const auto pass = run_forward(spec, store, gather_images<Scalar>(data, b), Mode::Eval);
    const auto px = static_cast<Index>(data.pixels());
    for (Index n = 0; n < pass.output.batch(); ++n) {
      const Scalar* p = pass.output.data() + n * px;
      out.emplace_back(p, p + px);
    }
  });
  return out;
}

#define SPDNN_INSTANTIATE_TRAIN(S)                                                             \
  template Tensor<S> gather_images(const SegmentationSet&, const std::vector<std::size_t>&);  \
  template Tensor<S> gather_masks(const SegmentationSet&, const std::vector<std::size_t>&);   \
  template TrainResult<S> train(const MergedNetworkSpec&, const SegmentationSet&,             \
                                const Split&, const TrainConfig&, const EpochCallback&);      \
  template double evaluate_loss(const MergedNetworkSpec&, const ParameterStore<S>&,           \
                                const SegmentationSet&, const std::vector<std::size_t>&,      \
                                int);                                                         \
  template std::vector<std::vector<float>> predict(const MergedNetworkSpec&,                  \
                                                   const ParameterStore<S>&,                  \
                                                   const SegmentationSet&,                    \
                                                   const std::vector<std::size_t>&, int);

SPDNN_INSTANTIATE_TRAIN(float)
SPDNN_INSTANTIATE_TRAIN(double)

}  // namespace spdnn
