#include "alqa/corpus/chunking.hpp"

#include <algorithm>

#include "alqa/common/error.hpp"

namespace alqa::corpus {

std::vector<TokenSpan> chunk_windows(std::size_t n_tokens, std::size_t max_tokens, std::size_t stride) {
  if (max_tokens == 0) throw PreconditionError("chunk_windows: max_tokens must be positive");
  if (stride >= max_tokens) throw PreconditionError("chunk_windows: stride must be smaller than max_tokens");
  std::vector<TokenSpan> windows;
  const std::size_t advance = max_tokens - stride;
  for (std::size_t start = 0; start < n_tokens; start += advance) {
    const std::size_t end = std::min(start + max_tokens, n_tokens);
    windows.push_back({start, end});
    if (end == n_tokens) break;
  }
  return windows;
}

std::vector<Chunk> chunk_offsets(std::string_view parent_id, std::string_view text, std::span<const CharSpan> offsets,
                                 std::size_t max_tokens, std::size_t stride, std::optional<CharSpan> answer_span) {
  std::vector<Chunk> chunks;
  std::optional<TokenSpan> answer_tokens;
  if (answer_span) answer_tokens = char_to_token_span(offsets, *answer_span);
  for (const auto& w : chunk_windows(offsets.size(), max_tokens, stride)) {
    Chunk c;
    c.parent_id = std::string(parent_id);
    c.window = w;
    c.char_span = {offsets[w.start].start, offsets[w.end - 1].end};
    c.text = std::string(text.substr(c.char_span.start, c.char_span.length()));
    if (answer_span) {
      const bool inside = answer_tokens && w.contains(*answer_tokens);
      c.contains_answer = inside;
      if (inside) c.answer_tokens = TokenSpan{answer_tokens->start - w.start, answer_tokens->end - w.start};
    }
    chunks.push_back(std::move(c));
  }
  return chunks;
}

std::vector<Chunk> chunk_context(const Document& doc, const Tokenizer& tokenizer, std::size_t max_tokens,
                                 std::size_t stride, std::optional<CharSpan> answer_span) {
  const auto offsets = tokenizer.offsets(doc.text);
  return chunk_offsets(doc.id, doc.text, offsets, max_tokens, stride, answer_span);
}

}  // namespace alqa::corpus
