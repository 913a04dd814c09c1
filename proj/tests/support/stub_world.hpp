#pragma once

// Large cheap pool for loop bookkeeping: short documents over a 40-word vocabulary,
// one gold sample per document, and scripted backends whose confidence depends on content.

#include <memory>
#include <random>

#include "alqa/loop/loop.hpp"
#include "scripted_backend.hpp"
#include "scripted_reader.hpp"

namespace alqa::testing {

struct StubWorld {
  std::vector<corpus::Document> docs;
  std::vector<corpus::QASample> pool, dev, eval;
  corpus::DocumentIndex index;
  std::shared_ptr<corpus::VocabTokenizer> tokenizer;

  loop::ExperimentData data() const {
    return {pool, dev, eval, std::span(docs).first(std::min<std::size_t>(docs.size(), 20)), &index};
  }
};

inline StubWorld make_stub_world(std::size_t n_pool, std::uint64_t seed = 1) {
  StubWorld w;
  std::mt19937_64 rng(seed);
  auto word = [&] { return "w" + std::to_string(rng() % 40); };
  const std::size_t n = n_pool + 20;
  for (std::size_t i = 0; i < n; ++i) {
    std::string text;
    for (int t = 0; t < 12; ++t) text += (t ? " " : "") + word();
    w.docs.push_back({"doc" + std::to_string(i), text, "target", 12});
  }
  w.tokenizer = std::make_shared<corpus::VocabTokenizer>();
  std::vector<std::string> texts{"what is w0 ?"};
  for (auto& d : w.docs) texts.push_back(d.text);
  w.tokenizer->fit(texts);
  for (auto& d : w.docs) w.index[d.id] = &d;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& d = w.docs[i];
    const auto offs = w.tokenizer->offsets(d.text);
    corpus::QASample s;
    s.id = d.id + "-q0";
    s.document_id = d.id;
    s.question = "what is " + d.text.substr(offs[0].start, offs[0].length()) + " ?";
    s.answer_span = offs[1];
    s.answer_text = d.text.substr(offs[1].start, offs[1].length());
    s.domain = "target";
    (i < n_pool ? w.pool : i < n_pool + 10 ? w.dev : w.eval).push_back(s);
  }
  return w;
}

// Question = first context token; answer = second token; confidence varies with both.
inline std::unique_ptr<ScriptedGenerator> stub_generator(std::size_t vocab) {
  auto g = std::make_unique<ScriptedGenerator>(vocab, [vocab](std::span<const generator::TokenId> src,
                                                              std::span<const generator::TokenId> prefix, auto) {
    std::vector<double> lp(vocab, -30.0);
    if (prefix.front() == corpus::kQuestionOpen) {
      lp[prefix.size() == 1 ? src[0] : corpus::kQuestionClose] = 0.0;
    } else {
      const double x = -0.05 * static_cast<double>(src[0] % 13) - 0.001 * static_cast<double>(src[1] % 11);
      lp[prefix.size() == 1 ? src[1] : corpus::kAnswerClose] = x;
    }
    return lp;
  });
  g->dev_losses = std::vector<double>(32, 1.0);
  return g;
}

// Always predicts the second context token.
inline std::unique_ptr<ScriptedReader> stub_reader() {
  return std::make_unique<ScriptedReader>([](auto, std::span<const reader::TokenId> c, auto) {
    std::vector<double> lp(c.size(), -20.0);
    lp[std::min<std::size_t>(1, c.size() - 1)] = 0.0;
    return reader::SpanDistributions{lp, lp};
  });
}

inline loop::BackendFactories stub_factories(std::size_t vocab) {
  return {[vocab] { return generator::GenerationBackendPtr(stub_generator(vocab)); },
          [] { return reader::ReaderBackendPtr(stub_reader()); },
          [] { return reader::ReaderBackendPtr(stub_reader()); }};
}

inline loop::ExperimentConfig stub_config(std::size_t r, std::size_t n) {
  loop::ExperimentConfig cfg;
  cfg.recipe.placement = loop::Placement::al_on_generator;
  cfg.recipe.iterations = r;
  cfg.recipe.batch = n;
  cfg.recipe.strategy = acquisition::Strategy::sp;
  cfg.recipe.seed = 5;
  cfg.generator_train.epochs_target = 1;
  cfg.reader_train.epochs = 1;
  cfg.synthesis.min_context_tokens = 5;
  cfg.synthesis.questions_per_context = 2;
  cfg.decode.beam_size = 2;
  cfg.decode.max_answer_tokens = 4;
  cfg.layout.max_question_tokens = 8;
  return cfg;
}

}  // namespace alqa::testing
