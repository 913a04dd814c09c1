#include "alqa/corpus/types.hpp"

#include "alqa/common/error.hpp"

namespace alqa::corpus {

std::string_view to_string(Provenance p) {
  switch (p) {
    case Provenance::human: return "human";
    case Provenance::oracle: return "oracle";
    case Provenance::synthetic: return "synthetic";
  }
  return "human";
}

Provenance provenance_from_string(std::string_view s) {
  if (s == "human") return Provenance::human;
  if (s == "oracle") return Provenance::oracle;
  if (s == "synthetic") return Provenance::synthetic;
  throw DataError("unknown provenance '" + std::string(s) + "'");
}

std::vector<std::string> QASample::gold_answers() const {
  std::vector<std::string> golds{answer_text};
  golds.insert(golds.end(), extra_answers.begin(), extra_answers.end());
  return golds;
}

bool span_invariant_holds(std::string_view text, const QASample& sample) {
  const auto& s = sample.answer_span;
  if (s.start >= s.end || s.end > text.size()) return false;
  return text.substr(s.start, s.length()) == sample.answer_text;
}

}  // namespace alqa::corpus
