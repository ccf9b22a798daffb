#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "spdnn/network.hpp"
#include "spdnn/synth_data.hpp"

namespace spdnn {

enum class Precision { F32, F64 };

std::string to_string(Precision p);
Precision parse_precision(const std::string& text);  // "f32" | "f64", else SpecError

struct TrainConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  int epochs = 30;
  int batch_size = 16;
  std::uint64_t seed = 42;
  Precision precision = Precision::F32;

  void validate() const;  // throws SpecError
  /// "key=value" lines, one per field.
  std::string describe() const;
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0;
  double val_loss = 0;
};

/// "epoch,train_loss,val_loss" with losses to 9 significant digits.
std::string loss_csv(const std::vector<EpochRecord>& history);

/// Images (and masks, as 0/1) of the given samples as (n, 1, H, W) tensors.
template <typename Scalar>
Tensor<Scalar> gather_images(const SegmentationSet& set, const std::vector<std::size_t>& idx);
template <typename Scalar>
Tensor<Scalar> gather_masks(const SegmentationSet& set, const std::vector<std::size_t>& idx);

template <typename Scalar>
struct TrainResult {
  ParameterStore<Scalar> store;
  std::vector<EpochRecord> history;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Mini-batch training with BCE loss and Nesterov momentum. Parameters are
/// initialized from cfg.seed; the training order is reshuffled every epoch
/// from a generator derived from the same seed. The reported train loss is
/// the sample-weighted mean of the batch losses seen during the epoch; the
/// validation loss is measured afterwards in eval mode. A non-finite loss
/// throws NumericError naming the epoch.
template <typename Scalar>
TrainResult<Scalar> train(const MergedNetworkSpec& spec, const SegmentationSet& data,
                          const Split& split, const TrainConfig& cfg,
                          const EpochCallback& on_epoch = {});

/// Eval-mode BCE over the given samples, sample-weighted across batches.
template <typename Scalar>
double evaluate_loss(const MergedNetworkSpec& spec, const ParameterStore<Scalar>& store,
                     const SegmentationSet& data, const std::vector<std::size_t>& idx,
                     int batch_size);

/// Eval-mode output maps, one H*W vector per sample.
template <typename Scalar>
std::vector<std::vector<float>> predict(const MergedNetworkSpec& spec,
                                        const ParameterStore<Scalar>& store,
                                        const SegmentationSet& data,
                                        const std::vector<std::size_t>& idx, int batch_size);

}  // namespace spdnn
