#include "alqa/common/utf8.hpp"

#include <string>

namespace alqa::utf8 {

std::size_t codepoint_count(std::string_view text) {
  std::size_t n = 0;
  for (unsigned char c : text) {
    if (!is_continuation(c)) ++n;
  }
  return n;
}

std::size_t byte_offset(std::string_view text, std::size_t cp_index) {
  std::size_t cp = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (is_continuation(static_cast<unsigned char>(text[i]))) continue;
    if (cp == cp_index) return i;
    ++cp;
  }
  return cp == cp_index ? text.size() : std::string::npos;
}

std::size_t codepoint_offset(std::string_view text, std::size_t byte_index) {
  if (byte_index > text.size()) return std::string::npos;
  if (byte_index < text.size() && is_continuation(static_cast<unsigned char>(text[byte_index]))) {
    return std::string::npos;
  }
  return codepoint_count(text.substr(0, byte_index));
}

}  // namespace alqa::utf8
