#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "alqa/corpus/types.hpp"

namespace alqa::corpus {

// Synthetic key-value QA data. Each document states a handful of facts amid filler
// sentences; each sample asks for one fact's value.
//
//   source style:  "colour = kavo ;"           question "what is colour ?"
//   target style:  "its genre is mire tuka ."  or "mire tuka is the genre ."
//                  question "which genre ?"
//
// Values are pseudo-words (one to three tokens) drawn from a fixed lexicon shared by
// both styles; keys differ between styles.
struct ToyCorpusOptions {
  enum class Style { source, target };
  Style style = Style::source;
  std::size_t documents = 100;
  std::size_t facts_min = 4;
  std::size_t facts_max = 7;
  std::size_t questions_per_document = 2;
  std::size_t min_tokens = 110;  // filler is added until the document reaches this length
  std::uint64_t seed = 1;
  std::string domain;  // defaults to "source" / "target"
  std::string id_prefix = "toy";
};

struct ToyCorpus {
  std::vector<Document> documents;
  std::vector<QASample> samples;
};

ToyCorpus make_toy_corpus(const ToyCorpusOptions& options);

const std::vector<std::string>& toy_value_lexicon();

}  // namespace alqa::corpus
