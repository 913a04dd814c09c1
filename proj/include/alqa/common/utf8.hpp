#pragma once

#include <cstddef>
#include <string_view>

// Spans are stored as byte offsets internally; files and HTTP payloads use
// Unicode code point offsets (the SQuAD/MRQA convention).
namespace alqa::utf8 {

std::size_t codepoint_count(std::string_view text);

// Byte offset of code point `cp_index`; cp_index == codepoint_count maps to text.size().
// Returns npos when out of range.
std::size_t byte_offset(std::string_view text, std::size_t cp_index);

// Code point index of a byte offset that lies on a code point boundary; npos otherwise.
std::size_t codepoint_offset(std::string_view text, std::size_t byte_index);

inline bool is_continuation(unsigned char c) { return (c & 0xC0) == 0x80; }

}  // namespace alqa::utf8
