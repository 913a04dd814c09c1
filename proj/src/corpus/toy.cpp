#include "alqa/corpus/toy.hpp"

#include <algorithm>
#include <random>

#include "alqa/common/hash.hpp"

namespace alqa::corpus {

namespace {

const std::vector<std::string> kSourceKeys = {
    "colour", "size",  "owner", "shape",  "weight", "origin", "material", "price",  "brand", "model",
    "flavour", "rating", "status", "level", "grade",  "code",   "style",    "theme",  "tier",  "maker"};

const std::vector<std::string> kTargetKeys = {
    "genre",  "author", "publisher", "language", "country", "director", "studio", "format", "editor", "narrator",
    "composer", "producer", "label", "venue",   "sponsor", "captain",  "coach",  "mascot", "founder", "anthem"};

// Pseudo-words from a fixed generator seed, so the lexicon never depends on corpus seeds.
std::vector<std::string> pseudo_words(std::size_t n, bool cvcv, std::uint64_t seed) {
  static const std::string cons = "bdfgklmnprstvz";
  static const std::string vow = "aeiou";
  std::mt19937_64 rng(seed);
  std::vector<std::string> out;
  std::vector<std::string> seen;
  while (out.size() < n) {
    std::string w;
    w += cons[rng() % cons.size()];
    w += vow[rng() % vow.size()];
    w += cons[rng() % cons.size()];
    if (cvcv) w += vow[rng() % vow.size()];
    if (std::find(seen.begin(), seen.end(), w) != seen.end()) continue;
    seen.push_back(w);
    out.push_back(w);
  }
  return out;
}

const std::vector<std::string>& filler_lexicon() {
  static const auto words = pseudo_words(180, false, 0xF111E5);
  return words;
}

struct Builder {
  std::string text;
  void append(const std::string& piece) {
    if (!text.empty()) text += ' ';
    text += piece;
  }
  CharSpan append_span(const std::string& piece) {
    if (!text.empty()) text += ' ';
    CharSpan s{text.size(), text.size() + piece.size()};
    text += piece;
    return s;
  }
};

std::string draw_value(std::mt19937_64& rng) {
  const auto& lex = toy_value_lexicon();
  std::uniform_real_distribution<double> u(0, 1);
  const double r = u(rng);
  const std::size_t len = r < 0.6 ? 1 : (r < 0.9 ? 2 : 3);
  std::string v;
  for (std::size_t i = 0; i < len; ++i) {
    if (i) v += ' ';
    v += lex[rng() % lex.size()];
  }
  return v;
}

}  // namespace

const std::vector<std::string>& toy_value_lexicon() {
  static const auto words = pseudo_words(300, true, 0x7A1DE5);
  return words;
}

ToyCorpus make_toy_corpus(const ToyCorpusOptions& o) {
  const bool source = o.style == ToyCorpusOptions::Style::source;
  const auto& keys = source ? kSourceKeys : kTargetKeys;
  const std::string domain = o.domain.empty() ? (source ? "source" : "target") : o.domain;
  std::mt19937_64 rng(derive_seed(o.seed, "toy-corpus", source ? 0 : 1));
  const auto& filler = filler_lexicon();
  ToyCorpus out;
  for (std::size_t d = 0; d < o.documents; ++d) {
    std::vector<std::string> doc_keys = keys;
    std::shuffle(doc_keys.begin(), doc_keys.end(), rng);
    const std::size_t n_facts =
        std::min(doc_keys.size(), o.facts_min + rng() % (o.facts_max - o.facts_min + 1));
    doc_keys.resize(n_facts);

    struct Fact {
      std::string key, value;
      CharSpan span;
    };
    std::vector<Fact> facts;
    for (auto& k : doc_keys) facts.push_back({k, draw_value(rng), {}});
    // Filler sentences are interleaved until the token budget is met; facts keep their order.
    std::size_t fact_tokens = 0;
    for (auto& f : facts) fact_tokens += 3 + static_cast<std::size_t>(std::count(f.value.begin(), f.value.end(), ' ')) + 1;
    std::size_t tokens = fact_tokens;
    std::vector<std::vector<std::string>> fillers;
    while (tokens < o.min_tokens) {
      std::vector<std::string> s;
      const std::size_t len = 4 + rng() % 5;
      for (std::size_t i = 0; i < len; ++i) s.push_back(filler[rng() % filler.size()]);
      tokens += len + 1;
      fillers.push_back(std::move(s));
    }
    std::vector<int> plan(facts.size(), 0);
    plan.resize(facts.size() + fillers.size(), 1);
    std::shuffle(plan.begin(), plan.end(), rng);

    Builder b;
    std::size_t fi = 0, si = 0;
    for (int kind : plan) {
      if (kind == 1) {
        for (auto& w : fillers[si]) b.append(w);
        b.append(".");
        ++si;
        continue;
      }
      auto& f = facts[fi++];
      if (source) {
        b.append(f.key);
        b.append("=");
        f.span = b.append_span(f.value);
        b.append(";");
      } else if (rng() % 2 == 0) {
        b.append("its");
        b.append(f.key);
        b.append("is");
        f.span = b.append_span(f.value);
        b.append(".");
      } else {
        f.span = b.append_span(f.value);
        b.append("is");
        b.append("the");
        b.append(f.key);
        b.append(".");
      }
    }

    Document doc;
    doc.id = o.id_prefix + "-" + domain + "-" + std::to_string(d);
    doc.text = b.text;
    doc.domain = domain;
    doc.token_count = tokens;

    std::vector<std::size_t> order(facts.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t q = 0; q < std::min(o.questions_per_document, facts.size()); ++q) {
      const auto& f = facts[order[q]];
      QASample s;
      s.id = doc.id + "-q" + std::to_string(q);
      s.document_id = doc.id;
      s.question = source ? "what is " + f.key + " ?" : "which " + f.key + " ?";
      s.answer_text = f.value;
      s.answer_span = f.span;
      s.provenance = Provenance::human;
      s.domain = domain;
      out.samples.push_back(std::move(s));
    }
    out.documents.push_back(std::move(doc));
  }
  return out;
}

}  // namespace alqa::corpus
