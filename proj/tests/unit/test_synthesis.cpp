#include <doctest.h>

#include <filesystem>
#include <set>

#include "alqa/synthesis/synthesis.hpp"
#include "scripted_backend.hpp"
#include "scripted_reader.hpp"
#include "toy_world.hpp"

using namespace alqa;
using namespace alqa::synthesis;
using corpus::kAnswerClose;
using corpus::kAnswerOpen;
using corpus::kQuestionClose;
using corpus::kQuestionOpen;

namespace {

std::string numbered(const std::string& stem, int n) {
  std::string s;
  for (int i = 0; i < n; ++i) s += (i ? " " : "") + stem + std::to_string(i);
  return s;
}

// Question: one context token (uniform over the first eight); answer: that same token.
testing::ScriptedGenerator echo_generator(std::size_t vocab) {
  return testing::ScriptedGenerator(vocab, [vocab](std::span<const generator::TokenId> src,
                                                   std::span<const generator::TokenId> prefix, auto) {
    std::vector<double> lp(vocab, -INFINITY);
    if (prefix.front() == kQuestionOpen) {
      if (prefix.size() == 1) {
        const std::size_t k = std::min<std::size_t>(8, src.size());
        for (std::size_t j = 0; j < k; ++j) lp[src[j]] = std::log(1.0 / static_cast<double>(k));
      } else {
        lp[kQuestionClose] = 0.0;
      }
      return lp;
    }
    if (prefix.size() == 1) {
      auto open = std::find(src.begin(), src.end(), kQuestionOpen);
      lp[*(open + 1)] = 0.0;
    } else {
      lp[kAnswerClose] = 0.0;
    }
    return lp;
  });
}

struct NumberedWorld {
  std::vector<corpus::Document> docs;
  corpus::VocabTokenizer tok;
  corpus::DocumentIndex index;
  NumberedWorld(std::size_t n_docs, int tokens) {
    std::vector<std::string> texts;
    for (std::size_t d = 0; d < n_docs; ++d) {
      docs.push_back({"d" + std::to_string(d), numbered("w" + std::to_string(d) + "x", tokens), "target", 0});
      texts.push_back(docs.back().text);
    }
    tok.fit(texts);
    for (auto& d : docs) index[d.id] = &d;
  }
};

SyntheticSample syn(std::string id, std::string doc, double lp) {
  SyntheticSample s;
  s.sample.id = std::move(id);
  s.sample.document_id = std::move(doc);
  s.sample.provenance = corpus::Provenance::synthetic;
  s.generator_logprob_sum = lp;
  return s;
}

}  // namespace

TEST_CASE("documents below the context minimum are skipped") {
  NumberedWorld w(3, 50);
  auto g = echo_generator(w.tok.vocab_size());
  SynthesisConfig cfg;
  try {
    synthesize_corpus(g, w.docs, w.tok, cfg, {}, {});
    FAIL("expected NoEligibleDocumentsError");
  } catch (const NoEligibleDocumentsError& e) {
    CHECK(e.report().documents_seen == 3);
    CHECK(e.report().documents_skipped == 3);
    CHECK(e.report().pairs_valid == 0);
  }
}

TEST_CASE("one eligible document with every decode valid yields ten samples") {
  NumberedWorld w(2, 120);
  w.docs[1].text = numbered("w1x", 20);  // ineligible
  auto g = echo_generator(w.tok.vocab_size());
  SynthesisConfig cfg;
  auto r = synthesize_corpus(g, w.docs, w.tok, cfg, {}, {});
  CHECK(r.samples.size() == 10);
  CHECK(r.report.documents_seen == 2);
  CHECK(r.report.documents_skipped == 1);
  CHECK(r.report.documents_processed == 1);
  CHECK(r.report.pairs_attempted == 10);
  CHECK(r.report.pairs_valid == 10);
  std::set<std::string> ids;
  for (const auto& s : r.samples) {
    CHECK(s.sample.provenance == corpus::Provenance::synthetic);
    CHECK(corpus::span_invariant_holds(w.docs[0].text, s.sample));
    CHECK(s.sample.question == s.sample.answer_text);
    CHECK(s.generator_logprob_sum == doctest::Approx(std::log(1.0 / 8)));
    ids.insert(s.sample.id);
  }
  CHECK(ids.size() == 10);
}

TEST_CASE("max_documents is respected exactly and report counts are consistent") {
  NumberedWorld w(7, 110);
  w.docs[2].text = "short";
  auto g = echo_generator(w.tok.vocab_size());
  SynthesisConfig cfg;
  cfg.max_documents = 5;
  cfg.questions_per_context = 2;
  auto r = synthesize_corpus(g, w.docs, w.tok, cfg, {}, {});
  CHECK(r.report.documents_seen == 5);
  CHECK(r.report.documents_seen == r.report.documents_skipped + r.report.documents_processed);
  CHECK(r.report.documents_processed == 4);
  CHECK(r.report.pairs_attempted == 8);
  std::set<std::string> docs;
  for (auto& s : r.samples) docs.insert(s.sample.document_id);
  CHECK(docs == std::set<std::string>{"d0", "d1", "d3", "d4"});
  auto j = r.report.to_json();
  CHECK(j["documents_seen"] == 5);
}

TEST_CASE("question seeds follow base + context index * questions + i") {
  CHECK(question_seed(100, 0, 10, 0) == 100);
  CHECK(question_seed(100, 2, 10, 3) == 123);
  CHECK(question_seed(7, 1, 4, 0) == 11);
}

TEST_CASE("parallel workers reproduce the sequential corpus") {
  const auto& w = testing::make_toy_world(30, 5);
  auto be = generator::make_generation_backend("toy-copy-gen", w.tokenizer->vocab_size(), 4);
  SynthesisConfig cfg;
  cfg.questions_per_context = 2;
  generator::GenInputLayout layout;
  layout.max_question_tokens = 10;
  generator::DecodeConfig dc;
  dc.max_answer_tokens = 4;
  dc.beam_size = 3;
  auto docs = std::span(w.source.documents).first(6);
  auto a = synthesize_corpus(*be, docs, *w.tokenizer, cfg, layout, dc);
  cfg.workers = 3;
  auto b = synthesize_corpus(*be, docs, *w.tokenizer, cfg, layout, dc);
  REQUIRE(a.samples.size() == b.samples.size());
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    CHECK(a.samples[i].sample.id == b.samples[i].sample.id);
    CHECK(a.samples[i].generator_logprob_sum == b.samples[i].generator_logprob_sum);
  }
  CHECK(a.report.rejection_reasons == b.report.rejection_reasons);
}

TEST_CASE("trained toy generator yields mostly valid pairs on key-value documents") {
  const auto& w = testing::make_toy_world(150, 5);
  auto be = testing::train_toy_generator(w, 3);
  SynthesisConfig cfg;
  cfg.questions_per_context = 5;
  auto docs = std::span(w.source.documents).first(20);
  auto r = synthesize_corpus(*be, docs, *w.tokenizer, cfg, {}, {});
  const double rate = static_cast<double>(r.report.pairs_valid) / static_cast<double>(r.report.pairs_attempted);
  MESSAGE("valid rate " << rate);
  CHECK(r.report.documents_processed == 20);
  CHECK(rate >= 0.5);
  for (const auto& s : r.samples) CHECK(corpus::span_invariant_holds(w.doc(s.sample.document_id).text, s.sample));
}

TEST_CASE("LM-score filter keeps the top n per context") {
  std::vector<SyntheticSample> s;
  for (int i = 0; i < 10; ++i) s.push_back(syn("a" + std::to_string(i), "ctx1", -1.0 * ((i * 7) % 10)));
  for (int i = 0; i < 3; ++i) s.push_back(syn("b" + std::to_string(i), "ctx2", -2.0 * i));
  auto kept = lm_score_filter(s, 5);
  std::size_t from1 = 0;
  double min_kept = 0, max_dropped = -INFINITY;
  std::set<std::string> kept_ids;
  for (auto& k : kept) {
    kept_ids.insert(k.sample.id);
    if (k.sample.document_id == "ctx1") ++from1, min_kept = std::min(min_kept, k.generator_logprob_sum);
  }
  for (auto& x : s)
    if (x.sample.document_id == "ctx1" && !kept_ids.count(x.sample.id)) max_dropped = std::max(max_dropped, x.generator_logprob_sum);
  CHECK(from1 == 5);
  CHECK(min_kept >= max_dropped);
  CHECK(kept.size() == 8);  // all three of ctx2 survive
  CHECK(kept.size() <= 5 * 2);
  for (auto& x : s) REQUIRE(x.lm_filter_rank);
  CHECK(s[0].lm_filter_rank == 1);  // logprob 0 is the best of ctx1

  auto again = lm_score_filter(kept, 5);
  REQUIRE(again.size() == kept.size());
  for (std::size_t i = 0; i < kept.size(); ++i) CHECK(again[i].sample.id == kept[i].sample.id);
}

TEST_CASE("LM-score filter breaks ties at the cut by sample id") {
  std::vector<SyntheticSample> s{syn("zeta", "c", -1.0), syn("alpha", "c", -1.0), syn("mid", "c", -0.5)};
  auto kept = lm_score_filter(s, 2);
  REQUIRE(kept.size() == 2);
  std::set<std::string> ids{kept[0].sample.id, kept[1].sample.id};
  CHECK(ids == std::set<std::string>{"mid", "alpha"});
}

TEST_CASE("global LM scope ranks across contexts") {
  std::vector<SyntheticSample> s{syn("a", "c1", -1), syn("b", "c1", -2), syn("c", "c2", -3), syn("d", "c2", -0.5)};
  auto kept = lm_score_filter(s, 2, LmScope::global);
  std::set<std::string> ids;
  for (auto& k : kept) ids.insert(k.sample.id);
  CHECK(ids == std::set<std::string>{"a", "d"});
}

namespace {

struct RtFixture {
  corpus::Document doc{"d", "the answer is 42 and not 41 today", "target", 0};
  corpus::VocabTokenizer tok;
  corpus::DocumentIndex index{{"d", &doc}};
  RtFixture() {
    std::vector<std::string> t{doc.text};
    tok.fit(t);
  }
  SyntheticSample make(const std::string& id, const std::string& answer) {
    SyntheticSample s = syn(id, "d", -1);
    s.sample.question = "which number ?";
    s.sample.answer_text = answer;
    s.sample.answer_span.start = doc.text.find(answer);
    s.sample.answer_span.end = s.sample.answer_span.start + answer.size();
    return s;
  }
  // Always predicts the token "42".
  testing::ScriptedReader reader() {
    const auto target = tok.encode("42")[0];
    return testing::ScriptedReader([target](auto, std::span<const reader::TokenId> c, auto) {
      std::vector<double> lp(c.size(), -50.0);
      for (std::size_t j = 0; j < c.size(); ++j)
        if (c[j] == target) lp[j] = 0.0;
      return reader::SpanDistributions{lp, lp};
    });
  }
};

}  // namespace

TEST_CASE("round-trip consistency keeps reproduced answers") {
  RtFixture f;
  auto r = f.reader();
  std::vector<SyntheticSample> s{f.make("ok", "42"), f.make("bad", "41")};
  RtconsReport rep;
  auto kept = rtcons_filter(s, r, f.tok, f.index, {}, {}, &rep);
  REQUIRE(kept.size() == 1);
  CHECK(kept[0].sample.id == "ok");
  CHECK(s[0].rtcons_pass == true);
  CHECK(s[1].rtcons_pass == false);
  CHECK(rep.checked == 2);
  CHECK(rep.kept == 1);

  // re-checking the kept set against the same frozen reader passes everything
  auto again = rtcons_filter(kept, r, f.tok, f.index, {});
  CHECK(again.size() == kept.size());

  // F1 mode accepts partial overlap
  std::vector<SyntheticSample> partial{f.make("p", "is 42")};
  CHECK(rtcons_filter(partial, r, f.tok, f.index, {}, {RtconsMatch::exact, 0.8}).empty());
  CHECK(rtcons_filter(partial, r, f.tok, f.index, {}, {RtconsMatch::f1_threshold, 0.6}).size() == 1);
}

TEST_CASE("round-trip prediction failures are dropped and counted") {
  RtFixture f;
  auto r = f.reader();
  auto orphan = f.make("orphan", "42");
  orphan.sample.document_id = "missing";
  std::vector<SyntheticSample> s{f.make("ok", "42"), orphan};
  RtconsReport rep;
  auto kept = rtcons_filter(s, r, f.tok, f.index, {}, {}, &rep);
  CHECK(kept.size() == 1);
  CHECK(rep.prediction_failures == 1);
  CHECK_FALSE(s[1].rtcons_pass.has_value());
}

TEST_CASE("both mode filters by LM score first and stores verdicts inline") {
  RtFixture f;
  auto r = f.reader();
  std::vector<SyntheticSample> s{f.make("a", "42"), f.make("b", "41"), f.make("c", "42")};
  s[0].generator_logprob_sum = -1;
  s[1].generator_logprob_sum = -2;
  s[2].generator_logprob_sum = -3;
  SynthesisConfig cfg;
  cfg.filter_mode = FilterMode::both;
  cfg.lm_filter_top_n = 2;
  FilterContext ctx{&r, &f.tok, &f.index, {}};
  FilterReport rep;
  auto out = apply_filters(s, cfg, ctx, &rep);
  REQUIRE(out.size() == 1);
  CHECK(out[0].sample.id == "a");
  CHECK(rep.after_lm == 2);
  CHECK(rep.rtcons.checked == 2);
  CHECK(s[0].rtcons_pass == true);
  CHECK(s[1].rtcons_pass == false);
  CHECK_FALSE(s[2].rtcons_pass.has_value());  // dropped by LM before the reader saw it
  CHECK(s[2].lm_filter_rank == 3);

  cfg.filter_mode = FilterMode::none;
  CHECK(apply_filters(s, cfg, ctx).size() == 3);
  cfg.filter_mode = FilterMode::rtcons;
  CHECK_THROWS_AS(apply_filters(s, cfg, {}), PreconditionError);

  auto dir = std::filesystem::temp_directory_path() / "alqa_test_syn";
  write_synthetic(dir / "syn.jsonl", s, f.index);
  auto back = read_synthetic(dir / "syn.jsonl", f.index);
  REQUIRE(back.size() == 3);
  CHECK(back[0].rtcons_pass == true);
  CHECK(back[1].lm_filter_rank == 2);
  CHECK_FALSE(back[2].rtcons_pass.has_value());
  CHECK(back[2].generator_logprob_sum == -3);
  CHECK(back[0].sample.answer_span == s[0].sample.answer_span);
  std::filesystem::remove_all(dir);
  CHECK(filter_mode_from_string("both") == FilterMode::both);
  CHECK_THROWS_AS(filter_mode_from_string("all"), ConfigError);
}

TEST_CASE("round-trip filter on a noisy toy generator keeps some but not all samples") {
  const auto& w = testing::make_toy_world(150, 5);
  auto gen = testing::train_toy_generator(w, 1);
  corpus::DocumentIndex idx;
  for (const auto& [k, v] : w.docs) idx[k] = v;
  auto rd = reader::make_reader_backend("toy-span-reader", w.tokenizer->vocab_size(), 3);
  reader::ReaderTrainConfig rc;
  rc.learning_rate = 0.005;
  rc.batch_size = 16;
  rc.epochs = 2;
  reader::train_reader(*rd, *w.tokenizer, std::span(w.source.samples).subspan(40), idx, rc);
  SynthesisConfig cfg;
  cfg.questions_per_context = 5;
  generator::DecodeConfig dc;
  dc.nucleus_p = 1.0;
  dc.top_k = 50;  // wide sampling makes the generator noisy
  auto r = synthesize_corpus(*gen, std::span(w.source.documents).first(20), *w.tokenizer, cfg, {}, dc);
  REQUIRE(!r.samples.empty());
  auto kept = rtcons_filter(r.samples, *rd, *w.tokenizer, idx, rc);
  const double frac = static_cast<double>(kept.size()) / static_cast<double>(r.samples.size());
  MESSAGE("kept fraction " << frac << " of " << r.samples.size());
  CHECK(frac > 0.0);
  CHECK(frac < 1.0);
}
