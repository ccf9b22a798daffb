#include "text_util.hpp"

#include <charconv>
#include <sstream>

#include "spdnn/errors.hpp"

namespace spdnn::detail {

std::vector<SourceLine> tokenize(std::string_view text) {
  std::vector<SourceLine> lines;
  int number = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    ++number;
    std::string_view line = text.substr(pos, end - pos);
    if (auto hash = line.find('#'); hash != std::string_view::npos)
      line = line.substr(0, hash);

    std::istringstream in{std::string(line)};
    SourceLine parsed{number, {}};
    for (std::string tok; in >> tok;) parsed.tokens.push_back(tok);
    if (!parsed.tokens.empty()) lines.push_back(std::move(parsed));
    pos = end + 1;
  }
  return lines;
}

std::pair<std::string, std::string> split_attr(const std::string& token,
                                               int line) {
  auto eq = token.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ParseError(line, token, "expected key=value attribute");
  return {token.substr(0, eq), token.substr(eq + 1)};
}

int parse_positive_int(const std::string& text, int line,
                       const std::string& token) {
  int value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size())
    throw ParseError(line, token, "expected an integer");
  if (value <= 0) throw ParseError(line, token, "value must be positive");
  return value;
}

bool parse_bool(const std::string& text, int line, const std::string& token) {
  if (text == "true") return true;
  if (text == "false") return false;
  throw ParseError(line, token, "expected true or false");
}

}  // namespace spdnn::detail
