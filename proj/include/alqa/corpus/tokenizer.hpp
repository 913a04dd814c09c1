#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "alqa/corpus/types.hpp"

namespace alqa::corpus {

using TokenId = std::int32_t;
using TokenIds = std::vector<TokenId>;

// Reserved ids shared by every vocabulary. The generator layout markers live here too.
enum SpecialToken : TokenId {
  kPad = 0,
  kUnk = 1,
  kQuestionOpen = 2,
  kQuestionClose = 3,
  kAnswerOpen = 4,
  kAnswerClose = 5,
  kSeparator = 6,
  kSpecialCount = 7,
};

class Tokenizer {
 public:
  virtual ~Tokenizer() = default;

  virtual std::string id() const = 0;
  // Per-token byte spans; monotonically nondecreasing and within [0, text.size()].
  virtual std::vector<CharSpan> offsets(std::string_view text) const = 0;
  virtual TokenIds encode(std::string_view text) const = 0;
  virtual std::string decode(std::span<const TokenId> ids) const = 0;
  virtual std::size_t vocab_size() const = 0;

  std::size_t count(std::string_view text) const { return offsets(text).size(); }
};

class Vocabulary {
 public:
  Vocabulary();

  TokenId lookup(std::string_view piece) const;
  const std::string& piece(TokenId id) const;
  std::size_t size() const { return pieces_.size(); }
  TokenId add(std::string_view piece);
  const std::vector<std::string>& pieces() const { return pieces_; }

 private:
  std::vector<std::string> pieces_;
  std::unordered_map<std::string, TokenId> index_;
};

// Vocabulary-backed tokenizer. Two segmentation schemes:
//   word:       alphanumeric runs and single punctuation characters, ASCII-lowercased
//   whitespace: maximal non-space runs, case preserved
class VocabTokenizer : public Tokenizer {
 public:
  enum class Scheme { word, whitespace };

  explicit VocabTokenizer(Scheme scheme = Scheme::word);

  // Adds every piece occurring at least `min_count` times, most frequent first, up to
  // `max_size` total entries (specials included). max_size == 0 means unbounded.
  void fit(std::span<const std::string> texts, std::size_t min_count = 1, std::size_t max_size = 0);

  std::string id() const override;
  std::vector<CharSpan> offsets(std::string_view text) const override;
  TokenIds encode(std::string_view text) const override;
  std::string decode(std::span<const TokenId> ids) const override;
  std::size_t vocab_size() const override { return vocab_.size(); }

  std::vector<std::string> pieces(std::string_view text) const;
  Scheme scheme() const { return scheme_; }
  const Vocabulary& vocabulary() const { return vocab_; }

  void save(const std::filesystem::path& path) const;
  static std::shared_ptr<VocabTokenizer> load(const std::filesystem::path& path);

 private:
  std::string normalize_piece(std::string_view raw) const;

  Scheme scheme_;
  Vocabulary vocab_;
};

// Token span covering every token that overlaps `span`; empty optional when none does.
std::optional<TokenSpan> char_to_token_span(std::span<const CharSpan> offsets, const CharSpan& span);

}  // namespace alqa::corpus
