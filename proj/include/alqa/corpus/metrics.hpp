#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace alqa::corpus {

// SQuAD answer normalization: lowercase, drop ASCII punctuation, drop the words
// a/an/the, collapse whitespace.
std::string normalize_answer(std::string_view text);
std::vector<std::string> normalized_tokens(std::string_view text);

double token_f1(std::string_view prediction, std::string_view gold);
bool exact_match(std::string_view prediction, std::string_view gold);

// Max over gold answers; 0 for an empty gold list.
double max_token_f1(std::string_view prediction, std::span<const std::string> golds);
bool max_exact_match(std::string_view prediction, std::span<const std::string> golds);

}  // namespace alqa::corpus
