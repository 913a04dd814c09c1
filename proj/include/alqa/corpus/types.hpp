#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace alqa::corpus {

// Half-open [start, end) range of byte offsets into a UTF-8 text.
struct CharSpan {
  std::size_t start = 0;
  std::size_t end = 0;

  std::size_t length() const { return end - start; }
  bool contains(const CharSpan& other) const { return start <= other.start && other.end <= end; }
  friend bool operator==(const CharSpan&, const CharSpan&) = default;
};

// Half-open [start, end) range of token indices.
struct TokenSpan {
  std::size_t start = 0;
  std::size_t end = 0;

  std::size_t length() const { return end - start; }
  bool contains(const TokenSpan& other) const { return start <= other.start && other.end <= end; }
  friend bool operator==(const TokenSpan&, const TokenSpan&) = default;
};

enum class Provenance { human, oracle, synthetic };

std::string_view to_string(Provenance p);
Provenance provenance_from_string(std::string_view s);

struct Document {
  std::string id;
  std::string text;
  std::string domain;
  std::size_t token_count = 0;
};

struct QASample {
  std::string id;
  std::string document_id;
  std::string question;
  std::string answer_text;
  CharSpan answer_span;
  Provenance provenance = Provenance::human;
  std::string domain;
  // Additional valid answers (multi-gold datasets); EM/F1 take the max over all golds.
  std::vector<std::string> extra_answers;

  std::vector<std::string> gold_answers() const;
};

// True when 0 <= start < end <= text.size() and text[start, end) == answer_text.
bool span_invariant_holds(std::string_view text, const QASample& sample);

struct Chunk {
  std::string parent_id;
  TokenSpan window;
  CharSpan char_span;  // from the first window token's start to the last token's end
  std::string text;
  std::optional<bool> contains_answer;
  // Answer position relative to the window; set when contains_answer is true.
  std::optional<TokenSpan> answer_tokens;
};

}  // namespace alqa::corpus
