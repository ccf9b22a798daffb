#include "spdnn/arch_ir.hpp"

#include <map>
#include <sstream>

#include "spdnn/errors.hpp"
#include "overloaded.hpp"
#include "text_util.hpp"

namespace spdnn {

using detail::overloaded;

std::string_view to_string(Activation act) {
  switch (act) {
    case Activation::ReLU: return "relu";
    case Activation::Sigmoid: return "sigmoid";
    case Activation::None: return "none";
  }
  return "none";
}

Activation parse_activation(std::string_view text) {
  if (text == "relu") return Activation::ReLU;
  if (text == "sigmoid") return Activation::Sigmoid;
  if (text == "none") return Activation::None;
  throw SpecError("unknown activation '" + std::string(text) + "'");
}

std::string op_signature(const LayerSpec& layer) {
  return std::visit(
      overloaded{
          [](const ConvLayer& c) { return std::to_string(c.kernel) + "C"; },
          [](const DenseLayer&) { return std::string("F"); },
          [](const MaxPoolLayer& p) { return "P" + std::to_string(p.window); },
      },
      layer);
}

int layer_out_channels(const LayerSpec& layer, int in_channels) {
  return std::visit(overloaded{
                        [](const ConvLayer& c) { return c.out_channels; },
                        [](const DenseLayer& d) { return d.units; },
                        [&](const MaxPoolLayer&) { return in_channels; },
                    },
                    layer);
}

LayerSpec with_width(const LayerSpec& layer, int width) {
  return std::visit(overloaded{
                        [&](ConvLayer c) -> LayerSpec {
                          c.out_channels = width;
                          return c;
                        },
                        [&](DenseLayer d) -> LayerSpec {
                          d.units = width;
                          return d;
                        },
                        [](MaxPoolLayer p) -> LayerSpec { return p; },
                    },
                    layer);
}

bool is_conv(const LayerSpec& layer) {
  return std::holds_alternative<ConvLayer>(layer);
}
bool is_dense(const LayerSpec& layer) {
  return std::holds_alternative<DenseLayer>(layer);
}
bool is_pool(const LayerSpec& layer) {
  return std::holds_alternative<MaxPoolLayer>(layer);
}

Shape3 propagate_shape(const LayerSpec& layer, const Shape3& in) {
  return std::visit(
      overloaded{
          [&](const ConvLayer& c) {
            return Shape3{in.height, in.width, c.out_channels};
          },
          [&](const DenseLayer& d) { return Shape3{1, 1, d.units}; },
          [&](const MaxPoolLayer& p) {
            if (in.height < p.window || in.width < p.window)
              throw ShapeError("maxpool w=" + std::to_string(p.window) +
                               " underflows " + std::to_string(in.height) +
                               "x" + std::to_string(in.width) + " input");
            return Shape3{in.height / p.window, in.width / p.window,
                          in.channels};
          },
      },
      layer);
}

std::int64_t layer_params(const LayerSpec& layer, const Shape3& in) {
  return std::visit(
      overloaded{
          [&](const ConvLayer& c) -> std::int64_t {
            const std::int64_t out = c.out_channels;
            std::int64_t n = std::int64_t{c.kernel} * c.kernel * in.channels * out + out;
            if (c.batch_norm) n += 2 * out;
            return n;
          },
          [&](const DenseLayer& d) -> std::int64_t {
            const std::int64_t fan_in =
                std::int64_t{in.height} * in.width * in.channels;
            return fan_in * d.units + d.units;
          },
          [](const MaxPoolLayer&) -> std::int64_t { return 0; },
      },
      layer);
}

bool is_identifier(std::string_view text) {
  if (text.empty()) return false;
  auto alpha = [](char ch) {
    return (ch >= 'a' && ch <= 'z') || (ch >= 'A' && ch <= 'Z') || ch == '_';
  };
  auto digit = [](char ch) { return ch >= '0' && ch <= '9'; };
  if (!alpha(text.front())) return false;
  for (char ch : text)
    if (!alpha(ch) && !digit(ch) && ch != '-') return false;
  return true;
}

NetworkSpec::NetworkSpec(std::string name, Shape3 input,
                         std::vector<LayerSpec> layers)
    : name_(std::move(name)), input_(input), layers_(std::move(layers)) {
  if (!is_identifier(name_))
    throw SpecError("network name '" + name_ + "' is not an identifier");
  if (input_.height <= 0 || input_.width <= 0 || input_.channels <= 0)
    throw SpecError("input shape must be positive");
  if (layers_.empty()) throw SpecError("network '" + name_ + "' has no layers");
  for (const auto& layer : layers_) detail::check_layer(layer);
  (void)shapes();
}

std::vector<Shape3> NetworkSpec::shapes() const {
  std::vector<Shape3> out;
  out.reserve(layers_.size());
  Shape3 cur = input_;
  for (const auto& layer : layers_) {
    cur = propagate_shape(layer, cur);
    out.push_back(cur);
  }
  return out;
}

namespace detail {

void check_layer(const LayerSpec& layer) {
  std::visit(overloaded{
                 [](const ConvLayer& c) {
                   if (c.kernel <= 0 || c.kernel % 2 == 0)
                     throw SpecError("conv kernel must be odd and positive, got " +
                                     std::to_string(c.kernel));
                   if (c.out_channels < 1)
                     throw SpecError("conv needs at least one output channel");
                 },
                 [](const DenseLayer& d) {
                   if (d.units < 1) throw SpecError("dense needs at least one unit");
                 },
                 [](const MaxPoolLayer& p) {
                   if (p.window < 1) throw SpecError("maxpool window must be positive");
                 },
             },
             layer);
}

LayerSpec parse_layer(const std::string& kind,
                      const std::vector<std::string>& attrs, int line) {
  std::map<std::string, std::pair<std::string, std::string>> seen;
  for (const auto& tok : attrs) {
    auto [key, value] = split_attr(tok, line);
    if (!seen.emplace(key, std::pair{value, tok}).second)
      throw ParseError(line, tok, "duplicate attribute");
  }
  auto take = [&](const std::string& key) -> const std::pair<std::string, std::string>* {
    auto it = seen.find(key);
    return it == seen.end() ? nullptr : &it->second;
  };
  auto require = [&](const std::string& key) {
    const auto* v = take(key);
    if (!v) throw ParseError(line, kind, "missing required attribute '" + key + "='");
    return *v;
  };
  auto activation = [&](Activation fallback) {
    const auto* v = take("act");
    if (!v) return fallback;
    try {
      return parse_activation(v->first);
    } catch (const SpecError& e) {
      throw ParseError(line, v->second, e.what());
    }
  };
  auto reject_unknown = [&](std::initializer_list<const char*> allowed) {
    for (const auto& [key, v] : seen) {
      bool ok = false;
      for (const char* a : allowed) ok = ok || key == a;
      if (!ok) throw ParseError(line, v.second, "unknown attribute for " + kind);
    }
  };

  if (kind == "conv") {
    reject_unknown({"k", "c", "bn", "act"});
    auto [k, ktok] = require("k");
    auto [c, ctok] = require("c");
    ConvLayer conv;
    conv.kernel = parse_positive_int(k, line, ktok);
    if (conv.kernel % 2 == 0)
      throw ParseError(line, ktok, "kernel size must be odd");
    conv.out_channels = parse_positive_int(c, line, ctok);
    if (const auto* bn = take("bn")) conv.batch_norm = parse_bool(bn->first, line, bn->second);
    conv.activation = activation(Activation::ReLU);
    return conv;
  }
  if (kind == "dense") {
    reject_unknown({"u", "act"});
    auto [u, utok] = require("u");
    DenseLayer dense;
    dense.units = parse_positive_int(u, line, utok);
    dense.activation = activation(Activation::ReLU);
    return dense;
  }
  if (kind == "maxpool") {
    reject_unknown({"w"});
    auto [w, wtok] = require("w");
    return MaxPoolLayer{parse_positive_int(w, line, wtok)};
  }
  throw ParseError(line, kind, "unknown layer kind");
}

std::string serialize_layer(const LayerSpec& layer) {
  return std::visit(
      overloaded{
          [](const ConvLayer& c) {
            return "conv k=" + std::to_string(c.kernel) +
                   " c=" + std::to_string(c.out_channels) +
                   " bn=" + (c.batch_norm ? "true" : "false") +
                   " act=" + std::string(to_string(c.activation));
          },
          [](const DenseLayer& d) {
            return "dense u=" + std::to_string(d.units) +
                   " act=" + std::string(to_string(d.activation));
          },
          [](const MaxPoolLayer& p) { return "maxpool w=" + std::to_string(p.window); },
      },
      layer);
}

}  // namespace detail

NetworkSpec parse_network(std::string_view text) {
  const auto lines = detail::tokenize(text);
  if (lines.empty()) throw ParseError(1, "", "empty architecture file");

  const auto& head = lines[0];
  if (head.tokens[0] != "network" || head.tokens.size() != 2)
    throw ParseError(head.number, head.tokens[0], "expected 'network NAME'");
  if (!is_identifier(head.tokens[1]))
    throw ParseError(head.number, head.tokens[1], "network name is not an identifier");

  if (lines.size() < 2) throw ParseError(head.number, "", "missing 'input H W C' line");
  const auto& in = lines[1];
  if (in.tokens[0] != "input" || in.tokens.size() != 4)
    throw ParseError(in.number, in.tokens[0], "expected 'input H W C'");
  Shape3 input{detail::parse_positive_int(in.tokens[1], in.number, in.tokens[1]),
               detail::parse_positive_int(in.tokens[2], in.number, in.tokens[2]),
               detail::parse_positive_int(in.tokens[3], in.number, in.tokens[3])};

  std::vector<LayerSpec> layers;
  Shape3 shape = input;
  for (std::size_t i = 2; i < lines.size(); ++i) {
    const auto& line = lines[i];
    std::vector<std::string> attrs(line.tokens.begin() + 1, line.tokens.end());
    LayerSpec layer = detail::parse_layer(line.tokens[0], attrs, line.number);
    try {
      shape = propagate_shape(layer, shape);
    } catch (const ShapeError& e) {
      throw ParseError(line.number, line.tokens[0], e.what());
    }
    layers.push_back(layer);
  }
  if (layers.empty())
    throw ParseError(in.number, "", "network '" + head.tokens[1] + "' has no layers");
  return NetworkSpec(head.tokens[1], input, std::move(layers));
}

std::string serialize_network(const NetworkSpec& spec) {
  std::ostringstream out;
  out << "network " << spec.name() << "\n";
  out << "input " << spec.input().height << " " << spec.input().width << " "
      << spec.input().channels << "\n";
  for (const auto& layer : spec.layers()) out << detail::serialize_layer(layer) << "\n";
  return out.str();
}

std::int64_t count_params(const NetworkSpec& spec, int input_channels) {
  if (input_channels <= 0) throw SpecError("input_channels must be positive");
  Shape3 shape = spec.input();
  shape.channels = input_channels;
  std::int64_t total = 0;
  for (const auto& layer : spec.layers()) {
    total += layer_params(layer, shape);
    shape = propagate_shape(layer, shape);
  }
  return total;
}

}  // namespace spdnn
