#include "alqa/corpus/tokenizer.hpp"

#include <algorithm>
#include <map>

#include "alqa/common/error.hpp"
#include "alqa/common/hash.hpp"
#include "alqa/common/jsonl.hpp"

namespace alqa::corpus {

namespace {

constexpr const char* kSpecialPieces[kSpecialCount] = {"<pad>", "<unk>", "<q>", "</q>", "<a>", "</a>", "<sep>"};

bool is_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

// Non-ASCII bytes are treated as word characters so multi-byte letters stay inside words.
bool is_word_byte(unsigned char c) {
  return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c >= 0x80;
}

}  // namespace

Vocabulary::Vocabulary() {
  for (const char* piece : kSpecialPieces) add(piece);
}

TokenId Vocabulary::lookup(std::string_view piece) const {
  auto it = index_.find(std::string(piece));
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::piece(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= pieces_.size()) return pieces_[kUnk];
  return pieces_[static_cast<std::size_t>(id)];
}

TokenId Vocabulary::add(std::string_view piece) {
  auto [it, inserted] = index_.try_emplace(std::string(piece), static_cast<TokenId>(pieces_.size()));
  if (inserted) pieces_.emplace_back(piece);
  return it->second;
}

VocabTokenizer::VocabTokenizer(Scheme scheme) : scheme_(scheme) {}

std::string VocabTokenizer::normalize_piece(std::string_view raw) const {
  std::string out(raw);
  if (scheme_ == Scheme::word) {
    for (char& c : out) {
      if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    }
  }
  return out;
}

std::vector<CharSpan> VocabTokenizer::offsets(std::string_view text) const {
  std::vector<CharSpan> spans;
  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n) {
    auto c = static_cast<unsigned char>(text[i]);
    if (is_space(c)) {
      ++i;
      continue;
    }
    std::size_t j = i + 1;
    if (scheme_ == Scheme::whitespace) {
      while (j < n && !is_space(static_cast<unsigned char>(text[j]))) ++j;
    } else if (is_word_byte(c)) {
      while (j < n && is_word_byte(static_cast<unsigned char>(text[j]))) ++j;
    }
    spans.push_back({i, j});
    i = j;
  }
  return spans;
}

std::vector<std::string> VocabTokenizer::pieces(std::string_view text) const {
  std::vector<std::string> out;
  for (const auto& s : offsets(text)) out.push_back(normalize_piece(text.substr(s.start, s.length())));
  return out;
}

TokenIds VocabTokenizer::encode(std::string_view text) const {
  TokenIds ids;
  for (const auto& s : offsets(text)) ids.push_back(vocab_.lookup(normalize_piece(text.substr(s.start, s.length()))));
  return ids;
}

std::string VocabTokenizer::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (TokenId id : ids) {
    if (id == kPad) continue;
    if (!out.empty()) out += ' ';
    out += vocab_.piece(id);
  }
  return out;
}

void VocabTokenizer::fit(std::span<const std::string> texts, std::size_t min_count, std::size_t max_size) {
  std::map<std::string, std::size_t> counts;
  for (const auto& t : texts) {
    for (auto& p : pieces(t)) ++counts[std::move(p)];
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  for (const auto& [piece, count] : ranked) {
    if (count < min_count) continue;
    if (max_size != 0 && vocab_.size() >= max_size) break;
    vocab_.add(piece);
  }
}

std::string VocabTokenizer::id() const {
  std::uint64_t h = kFnvOffset;
  for (const auto& p : vocab_.pieces()) {
    h = fnv1a(p, h);
    h = fnv1a("\n", h);
  }
  return std::string(scheme_ == Scheme::word ? "word" : "whitespace") + ":" + to_hex(h);
}

void VocabTokenizer::save(const std::filesystem::path& path) const {
  json j;
  j["kind"] = "vocab";
  j["scheme"] = scheme_ == Scheme::word ? "word" : "whitespace";
  j["tokenizer_id"] = id();
  j["tokens"] = vocab_.pieces();
  write_json_file(path, j);
}

std::shared_ptr<VocabTokenizer> VocabTokenizer::load(const std::filesystem::path& path) {
  const json j = read_json_file(path);
  if (j.value("kind", "") != "vocab") throw DataError(path.string() + ": not a vocabulary file");
  const std::string scheme = j.value("scheme", "word");
  auto tok = std::make_shared<VocabTokenizer>(scheme == "whitespace" ? Scheme::whitespace : Scheme::word);
  const auto& tokens = j.at("tokens");
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const std::string piece = tokens[i].get<std::string>();
    if (i < static_cast<std::size_t>(kSpecialCount)) {
      if (piece != kSpecialPieces[i]) throw DataError(path.string() + ": special token mismatch at " + std::to_string(i));
      continue;
    }
    tok->vocab_.add(piece);
  }
  return tok;
}

std::optional<TokenSpan> char_to_token_span(std::span<const CharSpan> offsets, const CharSpan& span) {
  std::optional<std::size_t> first;
  std::size_t last = 0;
  for (std::size_t i = 0; i < offsets.size(); ++i) {
    if (offsets[i].end > span.start && offsets[i].start < span.end) {
      if (!first) first = i;
      last = i;
    }
  }
  if (!first) return std::nullopt;
  return TokenSpan{*first, last + 1};
}

}  // namespace alqa::corpus
