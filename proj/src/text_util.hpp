#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "spdnn/arch_ir.hpp"

namespace spdnn::detail {

// One significant source line: comment stripped, split on whitespace.
struct SourceLine {
  int number = 0;
  std::vector<std::string> tokens;
};

std::vector<SourceLine> tokenize(std::string_view text);

// "key=value" -> (key, value); throws ParseError if there is no '='.
std::pair<std::string, std::string> split_attr(const std::string& token,
                                               int line);

int parse_positive_int(const std::string& text, int line,
                       const std::string& token);
bool parse_bool(const std::string& text, int line, const std::string& token);

// Layer from its keyword ("conv", "dense", "maxpool") and attribute tokens.
LayerSpec parse_layer(const std::string& kind,
                      const std::vector<std::string>& attrs, int line);

// Canonical text of a layer, e.g. "conv k=7 c=8 bn=true act=relu".
std::string serialize_layer(const LayerSpec& layer);

// Throws SpecError if the layer violates a per-layer invariant.
void check_layer(const LayerSpec& layer);

}  // namespace spdnn::detail
