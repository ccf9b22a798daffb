#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "spdnn/layers.hpp"
#include "spdnn/merge.hpp"
#include "spdnn/tensor.hpp"

namespace spdnn {

/// Parameter-store key of the output-merge layer.
inline constexpr std::string_view kOutputMergeId = "outmerge";

/// One trainable tensor. Vectors (bias, batch-norm scale/shift) are n x 1.
template <typename Scalar>
struct Parameter {
  std::string node;
  std::string role;  // "weight", "bias", "bn_scale", "bn_shift"
  Matrix<Scalar> value;
  Matrix<Scalar> velocity;
};

/// Gradients aligned index-for-index with ParameterStore::params().
template <typename Scalar>
using Gradients = std::vector<Matrix<Scalar>>;

template <typename Scalar>
class ParameterStore {
 public:
  /// He-normal weights (std = sqrt(2 / fan_in)), zero biases, unit BN scale,
  /// zero BN shift, running stats (0, 1), zero velocities. Parameters are
  /// drawn in node order from one generator seeded with `seed`.
  static ParameterStore initialize(const MergedNetworkSpec& spec, std::uint64_t seed);

  std::vector<Parameter<Scalar>>& params() { return params_; }
  const std::vector<Parameter<Scalar>>& params() const { return params_; }

  /// Index into params(), or -1.
  int find(std::string_view node, std::string_view role) const;
  Matrix<Scalar>& value(std::string_view node, std::string_view role);
  const Matrix<Scalar>& value(std::string_view node, std::string_view role) const;

  std::map<std::string, RunningStats<Scalar>>& running() { return running_; }
  const std::map<std::string, RunningStats<Scalar>>& running() const { return running_; }

  Index total_size() const;

 private:
  std::vector<Parameter<Scalar>> params_;
  std::map<std::string, RunningStats<Scalar>> running_;
};

/// Intermediates of one node kept for the backward pass.
template <typename Scalar>
struct NodeCache {
  Tensor<Scalar> input;     // after concatenation
  Tensor<Scalar> pre_norm;  // conv output before batch norm
  BatchNormResult<Scalar> norm;
  PoolResult<Scalar> pool;
  Tensor<Scalar> output;    // after activation
};

template <typename Scalar>
struct ForwardPass {
  Mode mode = Mode::Train;
  std::vector<NodeCache<Scalar>> nodes;
  NodeCache<Scalar> merge;  // output-merge layer (unused for Passthrough)
  Tensor<Scalar> output;
  std::map<std::string, RunningStats<Scalar>> running;  // updated in train mode
};

/// Evaluates nodes in order; feeders are concatenated channel-wise in their
/// listed order, and the output merge is applied last. Throws NumericError
/// naming the node if any activation becomes non-finite.
template <typename Scalar>
ForwardPass<Scalar> run_forward(const MergedNetworkSpec& spec, const ParameterStore<Scalar>& store,
                                const Tensor<Scalar>& batch, Mode mode);

/// Reverse-order accumulation; gradients reaching a concatenation are split
/// back to the feeders by channel slice. Throws NumericError naming the node
/// on a non-finite gradient.
template <typename Scalar>
Gradients<Scalar> run_backward(const MergedNetworkSpec& spec, const ParameterStore<Scalar>& store,
                               const ForwardPass<Scalar>& pass,
                               const Tensor<Scalar>& grad_output);

/// Commits the running statistics computed by a train-mode forward pass.
template <typename Scalar>
void commit_running_stats(ParameterStore<Scalar>& store, const ForwardPass<Scalar>& pass);

// ---- checkpoints -------------------------------------------------------------
//
// Layout (all integers u32 little-endian):
//   "SPDW1" | u8 scalar width (4 or 8) | u32 entry count
//   entry: u32 len, node id | u32 len, role | u32 rows | u32 cols | rows*cols
//          raw little-endian values, column-major
// Entries are the trainable parameters in store order followed by the
// batch-norm running statistics (roles "bn_running_mean", "bn_running_var").

/// Scalar width (4 or 8) recorded in a checkpoint; throws FormatError.
int checkpoint_scalar_width(std::istream& in);

template <typename Scalar>
void save_checkpoint(std::ostream& out, const ParameterStore<Scalar>& store);

/// Loads into a store shaped for `spec`; throws MismatchError naming the
/// first offending node, FormatError on a corrupt stream.
template <typename Scalar>
ParameterStore<Scalar> load_checkpoint(std::istream& in, const MergedNetworkSpec& spec);

}  // namespace spdnn
