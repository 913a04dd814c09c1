#pragma once

#include <optional>
#include <vector>

#include "alqa/corpus/tokenizer.hpp"
#include "alqa/corpus/types.hpp"

namespace alqa::corpus {

// Sliding windows over `n_tokens`: each at most `max_tokens` long, advancing by
// (max_tokens - stride) so consecutive windows overlap by `stride`.
std::vector<TokenSpan> chunk_windows(std::size_t n_tokens, std::size_t max_tokens, std::size_t stride);

// Chunks `doc` under `tokenizer`. When `answer_span` (byte offsets) is given, every chunk
// records whether the full answer lies inside its window.
std::vector<Chunk> chunk_context(const Document& doc, const Tokenizer& tokenizer, std::size_t max_tokens,
                                 std::size_t stride, std::optional<CharSpan> answer_span = std::nullopt);

// Same, over precomputed token offsets of `text`.
std::vector<Chunk> chunk_offsets(std::string_view parent_id, std::string_view text,
                                 std::span<const CharSpan> offsets, std::size_t max_tokens, std::size_t stride,
                                 std::optional<CharSpan> answer_span = std::nullopt);

}  // namespace alqa::corpus
