#include "alqa/corpus/metrics.hpp"

#include <algorithm>
#include <map>
#include <string_view>

namespace alqa::corpus {

namespace {

constexpr std::string_view kPunctuation = "!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~";

bool is_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

bool is_word_byte(unsigned char c) {
  return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c >= 0x80;
}

}  // namespace

std::string normalize_answer(std::string_view text) {
  std::string s;
  s.reserve(text.size());
  for (char c : text) {
    if (kPunctuation.find(c) != std::string_view::npos) continue;
    s += (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;
  }

  // Drop the article words, then collapse whitespace.
  std::string stripped;
  stripped.reserve(s.size());
  for (std::size_t i = 0; i < s.size();) {
    if (!is_word_byte(static_cast<unsigned char>(s[i]))) {
      stripped += s[i++];
      continue;
    }
    std::size_t j = i;
    while (j < s.size() && is_word_byte(static_cast<unsigned char>(s[j]))) ++j;
    const std::string_view word(s.data() + i, j - i);
    if (word == "a" || word == "an" || word == "the") {
      stripped += ' ';
    } else {
      stripped += word;
    }
    i = j;
  }

  std::string out;
  for (std::size_t i = 0; i < stripped.size();) {
    while (i < stripped.size() && is_space(static_cast<unsigned char>(stripped[i]))) ++i;
    std::size_t j = i;
    while (j < stripped.size() && !is_space(static_cast<unsigned char>(stripped[j]))) ++j;
    if (j > i) {
      if (!out.empty()) out += ' ';
      out.append(stripped, i, j - i);
    }
    i = j;
  }
  return out;
}

std::vector<std::string> normalized_tokens(std::string_view text) {
  const std::string norm = normalize_answer(text);
  std::vector<std::string> tokens;
  for (std::size_t i = 0; i < norm.size();) {
    std::size_t j = norm.find(' ', i);
    if (j == std::string::npos) j = norm.size();
    tokens.emplace_back(norm, i, j - i);
    i = j + 1;
  }
  return tokens;
}

double token_f1(std::string_view prediction, std::string_view gold) {
  const auto pred = normalized_tokens(prediction);
  const auto ref = normalized_tokens(gold);
  if (pred.empty() || ref.empty()) return pred.empty() && ref.empty() ? 1.0 : 0.0;
  std::map<std::string_view, int> counts;
  for (const auto& t : ref) ++counts[t];
  int common = 0;
  for (const auto& t : pred) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  if (common == 0) return 0.0;
  const double precision = static_cast<double>(common) / static_cast<double>(pred.size());
  const double recall = static_cast<double>(common) / static_cast<double>(ref.size());
  return 2.0 * precision * recall / (precision + recall);
}

bool exact_match(std::string_view prediction, std::string_view gold) {
  return normalize_answer(prediction) == normalize_answer(gold);
}

double max_token_f1(std::string_view prediction, std::span<const std::string> golds) {
  double best = 0.0;
  for (const auto& g : golds) best = std::max(best, token_f1(prediction, g));
  return best;
}

bool max_exact_match(std::string_view prediction, std::span<const std::string> golds) {
  return std::any_of(golds.begin(), golds.end(), [&](const std::string& g) { return exact_match(prediction, g); });
}

}  // namespace alqa::corpus
