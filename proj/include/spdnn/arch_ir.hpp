#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace spdnn {

enum class Activation { ReLU, Sigmoid, None };

std::string_view to_string(Activation act);
Activation parse_activation(std::string_view text);  // throws SpecError

/// Square convolution, stride 1, "same" zero padding.
struct ConvLayer {
  int kernel = 3;
  int out_channels = 1;
  bool batch_norm = false;
  Activation activation = Activation::ReLU;

  friend bool operator==(const ConvLayer&, const ConvLayer&) = default;
};

/// Fully connected layer over the flattened (C, H, W) input.
struct DenseLayer {
  int units = 1;
  Activation activation = Activation::ReLU;

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

/// Non-overlapping square max pooling, stride = window.
struct MaxPoolLayer {
  int window = 2;

  friend bool operator==(const MaxPoolLayer&, const MaxPoolLayer&) = default;
};

using LayerSpec = std::variant<ConvLayer, DenseLayer, MaxPoolLayer>;

/// Operation signature used as the first half of a graph node label:
/// "<k>C" for convolutions, "F" for dense layers, "P<w>" for pooling.
std::string op_signature(const LayerSpec& layer);

/// Output channels (or units) a layer produces given its input channels.
int layer_out_channels(const LayerSpec& layer, int in_channels);

/// Copy of `layer` with its width (channels or units) replaced. Pooling is
/// width-preserving and is returned unchanged.
LayerSpec with_width(const LayerSpec& layer, int width);

bool is_conv(const LayerSpec& layer);
bool is_dense(const LayerSpec& layer);
bool is_pool(const LayerSpec& layer);

/// Activation-map shape in (height, width, channels) order.
struct Shape3 {
  int height = 0;
  int width = 0;
  int channels = 0;

  friend bool operator==(const Shape3&, const Shape3&) = default;
};

/// Shape after applying `layer`; throws ShapeError on spatial underflow.
Shape3 propagate_shape(const LayerSpec& layer, const Shape3& in);

/// Trainable parameters of one layer fed by `in`: weights, biases and
/// batch-norm scale/shift.
std::int64_t layer_params(const LayerSpec& layer, const Shape3& in);

/// A validated chain of layers. Construction enforces every invariant, so a
/// NetworkSpec instance is always well-formed.
class NetworkSpec {
 public:
  NetworkSpec(std::string name, Shape3 input, std::vector<LayerSpec> layers);

  const std::string& name() const { return name_; }
  const Shape3& input() const { return input_; }
  const std::vector<LayerSpec>& layers() const { return layers_; }
  const LayerSpec& output_layer() const { return layers_.back(); }

  /// Shapes after each layer; element i is the output of layer i.
  std::vector<Shape3> shapes() const;

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;

 private:
  std::string name_;
  Shape3 input_;
  std::vector<LayerSpec> layers_;
};

bool is_identifier(std::string_view text);

NetworkSpec parse_network(std::string_view text);
std::string serialize_network(const NetworkSpec& spec);

std::int64_t count_params(const NetworkSpec& spec, int input_channels);
inline std::int64_t count_params(const NetworkSpec& spec) {
  return count_params(spec, spec.input().channels);
}

}  // namespace spdnn
