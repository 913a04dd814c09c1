#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <set>

#include "alqa/acquisition/acquisition.hpp"
#include "alqa/common/error.hpp"
#include "alqa/common/hash.hpp"
#include "alqa/reader/toy_reader.hpp"
#include "scripted_backend.hpp"
#include "scripted_reader.hpp"
#include "toy_world.hpp"

using namespace alqa;
using namespace alqa::acquisition;
using corpus::kAnswerClose;
using corpus::kAnswerOpen;
using corpus::kQuestionClose;
using corpus::kQuestionOpen;
using generator::TokenIds;

namespace {

struct Words {
  std::string text;
  corpus::VocabTokenizer tok;
  explicit Words(std::string t, std::vector<std::string> extra = {}) : text(std::move(t)) {
    extra.push_back(text);
    tok.fit(extra);
  }
  TokenIds ids(std::string_view s) const { return tok.encode(s); }
};

// Question: the first context token. Answer tokens and per-step log-prob come from `answer(seed)`.
using AnswerFn = std::function<std::pair<TokenIds, double>(std::optional<std::uint64_t>)>;

testing::ScriptedGenerator pair_generator(std::size_t vocab, AnswerFn answer) {
  return testing::ScriptedGenerator(vocab, [vocab, answer](std::span<const generator::TokenId> src,
                                                           std::span<const generator::TokenId> prefix, auto seed) {
    std::vector<double> lp(vocab, -INFINITY);
    if (prefix.front() == kQuestionOpen) {
      lp[prefix.size() == 1 ? src[0] : kQuestionClose] = 0.0;
      return lp;
    }
    auto [tokens, x] = answer(seed);
    const std::size_t t = prefix.size() - 1;
    lp[t < tokens.size() ? tokens[t] : kAnswerClose] = x;
    return lp;
  });
}

ScoringModels gen_models(generator::GenerationBackend& g, const corpus::Tokenizer& tok) {
  ScoringModels m;
  m.generator = &g;
  m.generator_tokenizer = &tok;
  return m;
}

// Puts all mass on [s, e] of every chunk.
testing::ScriptedReader span_reader(std::size_t s, std::size_t e) {
  return testing::ScriptedReader([s, e](auto, std::span<const reader::TokenId> c, auto) {
    std::vector<double> st(c.size(), -INFINITY), en(c.size(), -INFINITY);
    st[s] = 0.0;
    en[e] = 0.0;
    return reader::SpanDistributions{st, en};
  });
}

double binary_entropy(double p) {
  double h = 0.0;
  if (p > 0) h -= p * std::log(p);
  if (p < 1) h -= (1 - p) * std::log(1 - p);
  return h;
}

AcquisitionScore scored(std::string id, double priority) {
  AcquisitionScore s;
  s.candidate_id = std::move(id);
  s.priority = priority;
  return s;
}

}  // namespace

TEST_SUITE("sentence probability") {
  TEST_CASE("probability one per answer step gives zero") {
    Words w("t0 t1 t2 t3 t4");
    auto g = pair_generator(w.tok.vocab_size(), [&](auto) { return std::pair{w.ids("t2 t3"), 0.0}; });
    auto r = score_sp(gen_models(g, w.tok), {"c", w.text, ""});
    CHECK(r.raw == 0.0);
    CHECK(r.flags.empty());
  }

  TEST_CASE("per-step log-probs -0.1 and -0.3 average to -0.2") {
    Words w("t0 t1 t2 t3 t4");
    testing::ScriptedGenerator g(w.tok.vocab_size(), [&](std::span<const generator::TokenId> src, auto prefix, auto) {
      std::vector<double> lp(w.tok.vocab_size(), -INFINITY);
      if (prefix.front() == kQuestionOpen)
        lp[prefix.size() == 1 ? src[0] : kQuestionClose] = 0.0;
      else if (prefix.size() == 1)
        lp[w.ids("t3")[0]] = -0.1;
      else
        lp[kAnswerClose] = -0.3;
      return lp;
    });
    CHECK(score_sp(gen_models(g, w.tok), {"c", w.text, ""}).raw == doctest::Approx(-0.2).epsilon(1e-12));
  }

  TEST_CASE("less confident SP is selected first") {
    std::vector<AcquisitionScore> s{scored("x", priority_for(Strategy::sp, -0.05)),
                                    scored("y", priority_for(Strategy::sp, -0.2))};
    CHECK(rank_and_select(s, 1) == std::vector<std::string>{"y"});
  }

  TEST_CASE("over-long contexts are truncated rather than rejected") {
    std::string text;
    for (int i = 0; i < 2000; ++i) text += "t" + std::to_string(i % 40) + " ";
    Words w(text);
    auto g = pair_generator(w.tok.vocab_size(), [&](auto) { return std::pair{w.ids("t3"), -1.0}; });
    auto m = gen_models(g, w.tok);
    m.layout.max_source_tokens = 50;
    m.layout.max_question_tokens = 10;
    CHECK(score_sp(m, {"c", w.text, ""}).raw == doctest::Approx(-1.0));
  }

  TEST_CASE("decode failures get the flagged sentinel and rank first") {
    Words w("t0 t1 t2 t3", {"broken t9"});
    const auto broken = w.ids("broken")[0];
    testing::ScriptedGenerator g(w.tok.vocab_size(), [&](std::span<const generator::TokenId> src, auto prefix, auto) {
      std::vector<double> lp(w.tok.vocab_size(), -INFINITY);
      if (prefix.front() == kQuestionOpen) {
        lp[prefix.size() == 1 && src[0] != broken ? src[0] : kQuestionClose] = 0.0;
      } else {
        lp[prefix.size() == 1 ? w.ids("t2")[0] : kAnswerClose] = -5.0;
      }
      return lp;
    });
    auto m = gen_models(g, w.tok);
    const Candidate ok{"ok", w.text, ""}, bad{"bad", "broken t9", ""};
    auto r = score_sp(m, bad);
    CHECK(r.raw == kDecodeFailureLogprob);
    CHECK(kDecodeFailureLogprob == doctest::Approx(std::log(1e-9)).epsilon(1e-12));
    REQUIRE(r.flags.size() == 2);
    CHECK(r.flags[0] == "decode_failed");
    CHECK(r.flags[1] == "question_empty");
    DropoutEnsembleConfig cfg;
    std::vector<Candidate> cands{ok, bad};
    for (Strategy s : {Strategy::sp, Strategy::dsp, Strategy::ls}) {
      auto scores = score_pool(s, m, cands, cfg, 0);
      CHECK(rank_and_select(scores, 1) == std::vector<std::string>{"bad"});
    }
    // RT failure: F1 0, the least confident possible value
    auto reader = span_reader(0, 0);
    m.reader = &reader;
    m.reader_tokenizer = &w.tok;
    CHECK(score_rt(m, bad).raw == 0.0);
    CHECK(score_rt(m, bad).flags.front() == "decode_failed");
  }

  TEST_CASE("stochastic backends are rejected") {
    Words w("t0 t1 t2");
    auto g = pair_generator(w.tok.vocab_size(), [&](auto) { return std::pair{w.ids("t1"), 0.0}; });
    g.set_stochastic(true, 1);
    CHECK_THROWS_AS(score_sp(gen_models(g, w.tok), {"c", w.text, ""}), PreconditionError);
  }
}

TEST_SUITE("dropout sentence probability") {
  TEST_CASE("passes scoring -0.2 and -0.4 average to -0.3") {
    Words w("t0 t1 t2 t3 t4");
    DropoutEnsembleConfig cfg;
    cfg.passes = 2;
    cfg.base_seed = 11;
    const auto s0 = derive_seed(11, "c", 0), s1 = derive_seed(11, "c", 1);
    auto g = pair_generator(w.tok.vocab_size(), [&](std::optional<std::uint64_t> seed) {
      double x = !seed ? -0.1 : *seed == s0 ? -0.2 : *seed == s1 ? -0.4 : 99.0;
      return std::pair{w.ids("t1 t2"), x};
    });
    auto m = gen_models(g, w.tok);
    auto r = score_dsp(m, {"c", w.text, ""}, cfg);
    CHECK(r.raw == doctest::Approx(-0.3).epsilon(1e-12));
    CHECK(r.passes == 2);
    CHECK_FALSE(g.stochastic());
    CHECK(score_sp(m, {"c", w.text, ""}).raw == doctest::Approx(-0.1));
  }

  TEST_CASE("constant passes give the SP of any pass") {
    Words w("t0 t1 t2 t3 t4");
    auto g = pair_generator(w.tok.vocab_size(), [&](auto) { return std::pair{w.ids("t3"), -0.7}; });
    CHECK(score_dsp(gen_models(g, w.tok), {"c", w.text, ""}, {}).raw == doctest::Approx(-0.7));
  }

  TEST_CASE("single pass without dropout equals SP on the toy generator") {
    const auto w = testing::make_toy_world(80, 5);
    auto g = testing::train_toy_generator(w, 1);
    auto m = gen_models(*g, *w.tokenizer);
    DropoutEnsembleConfig cfg;
    cfg.passes = 1;
    cfg.dropout = false;
    for (std::size_t i = 0; i < 5; ++i) {
      const Candidate c{w.source.documents[i].id, w.source.documents[i].text, ""};
      auto sp = score_sp(m, c);
      auto dsp = score_dsp(m, c, cfg);
      CHECK(std::abs(sp.raw - dsp.raw) <= 1e-9);
      CHECK(sp.raw <= 0.0);
    }
    // with dropout the ensemble moves away from the deterministic score
    cfg.dropout = true;
    cfg.passes = 4;
    const Candidate c{w.source.documents[0].id, w.source.documents[0].text, ""};
    CHECK(score_dsp(m, c, cfg).raw != score_sp(m, c).raw);
  }
}

TEST_SUITE("lexical similarity") {
  TEST_CASE("meteor of identical five-token answers") {
    std::vector<std::string> a{"v1", "v2", "v3", "v4", "v5"};
    // one chunk over five matches: penalty 0.5 * (1/5)^3
    CHECK(meteor(a, a) == doctest::Approx(1.0 - 0.5 / 125.0).epsilon(1e-12));
    CHECK(meteor(a, a) == doctest::Approx(0.996));
  }

  TEST_CASE("meteor on a hand-worked fragmented match") {
    std::vector<std::string> h{"a", "b", "c", "d"}, r{"a", "b", "x", "c", "d"};
    // P = 1, R = 0.8, Fmean = 0.8 / (0.9 + 0.08), two chunks over four matches
    const double fmean = 0.8 / 0.98;
    CHECK(meteor(h, r) == doctest::Approx(fmean * (1 - 0.5 * 0.125)).epsilon(1e-12));
    CHECK(meteor(h, {}) == 0.0);
    std::vector<std::string> d{"p", "q"};
    CHECK(meteor(h, d) == 0.0);
  }

  TEST_CASE("identical answers give LS = Sim(a, a)") {
    Words w("t0 t1 t2 t3 t4 t5 t6 t7");
    auto g = pair_generator(w.tok.vocab_size(), [&](auto) { return std::pair{w.ids("t2 t3 t4 t5 t6"), -0.1}; });
    auto r = score_ls(gen_models(g, w.tok), {"c", w.text, ""}, {});
    CHECK(r.raw == doctest::Approx(0.996).epsilon(1e-12));
    CHECK(r.passes == 10);
  }

  TEST_CASE("two disjoint answers give LS = 0") {
    Words w("t0 t1 t2 t3 t4 t5 t6 t7");
    DropoutEnsembleConfig cfg;
    cfg.passes = 2;
    const auto s0 = derive_seed(0, "c", 0);
    auto g = pair_generator(w.tok.vocab_size(), [&](std::optional<std::uint64_t> seed) {
      return std::pair{w.ids(seed && *seed == s0 ? "t1 t2" : "t5 t6"), -0.1};
    });
    CHECK(score_ls(gen_models(g, w.tok), {"c", w.text, ""}, cfg).raw == 0.0);
    cfg.passes = 1;
    CHECK_THROWS_AS(score_ls(gen_models(g, w.tok), {"c", w.text, ""}, cfg), PreconditionError);
  }

  TEST_CASE("LS is symmetric under relabeling passes and empty answers score zero") {
    std::vector<std::vector<std::string>> a{{"x", "y"}, {"x", "z", "y"}, {"q"}, {}};
    const double base = lexical_similarity(a);
    std::vector<std::vector<std::string>> b{a[2], a[0], a[3], a[1]};
    CHECK(lexical_similarity(b) == doctest::Approx(base).epsilon(1e-12));
    const double oracle = (meteor(a[0], a[1]) + meteor(a[1], a[0])) / 12.0;
    CHECK(base == doctest::Approx(oracle).epsilon(1e-12));
  }
}

TEST_SUITE("round trip") {
  TEST_CASE("reader agreement maps to token F1") {
    Words w("red green blue cyan magenta");
    auto g = pair_generator(w.tok.vocab_size(), [&](auto) { return std::pair{w.ids("red green blue"), -0.1}; });
    auto m = gen_models(g, w.tok);
    m.reader_tokenizer = &w.tok;
    const Candidate c{"c", w.text, ""};

    auto same = span_reader(0, 2);
    m.reader = &same;
    CHECK(score_rt(m, c).raw == 1.0);
    auto disjoint = span_reader(3, 4);
    m.reader = &disjoint;
    CHECK(score_rt(m, c).raw == 0.0);
    auto shifted = span_reader(1, 3);
    m.reader = &shifted;
    CHECK(score_rt(m, c).raw == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  }

  TEST_CASE("D-SP+RT combination") {
    CHECK(dsp_rt_combine(0.0, 0.5) == doctest::Approx(1.5));
    CHECK(dsp_rt_combine(-0.25, 0.5) == doctest::Approx(0.63533528).epsilon(1e-8));
    CHECK(dsp_rt_combine(kDecodeFailureLogprob, 0.0) > 0.0);
  }

  TEST_CASE("toy scores stay in their ranges") {
    const auto w = testing::make_toy_world(80, 5);
    auto g = testing::train_toy_generator(w, 1);
    auto rd = reader::make_reader_backend("toy-span-reader", w.tokenizer->vocab_size(), 2);
    auto m = gen_models(*g, *w.tokenizer);
    m.reader = rd.get();
    m.reader_tokenizer = w.tokenizer.get();
    DropoutEnsembleConfig cfg;
    cfg.passes = 3;
    for (std::size_t i = 0; i < 8; ++i) {
      const Candidate c{w.source.documents[i].id, w.source.documents[i].text, w.source.samples[2 * i].question};
      auto rt = score_rt(m, c).raw;
      CHECK(rt >= 0.0);
      CHECK(rt <= 1.0);
      auto both = score_dsp_rt(m, c, cfg).raw;
      CHECK(both > 0.0);
      CHECK(both <= 2.0);
      CHECK(score_bald(m, c, cfg).raw >= -1e-9);
    }
  }
}

TEST_SUITE("bald") {
  TEST_CASE("identical pass distributions carry no information") {
    std::vector<std::vector<double>> p{{0.3, 0.7}, {0.3, 0.7}, {0.3, 0.7}};
    CHECK(std::abs(mutual_information(p)) <= 1e-12);
  }

  TEST_CASE("opposite one-hot passes give ln 2") {
    std::vector<std::vector<double>> p{{1.0, 0.0}, {0.0, 1.0}};
    CHECK(mutual_information(p) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }

  TEST_CASE("two-token distributions match the binary entropy closed form") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int t = 0; t < 200; ++t) {
      const double a = u(rng), b = u(rng);
      std::vector<std::vector<double>> p{{a, 1 - a}, {b, 1 - b}};
      const double oracle = binary_entropy((a + b) / 2) - (binary_entropy(a) + binary_entropy(b)) / 2;
      CHECK(std::abs(mutual_information(p) - oracle) <= 1e-9);
    }
  }

  TEST_CASE("BALD is non-negative on random pass sets") {
    std::mt19937_64 rng(9);
    std::gamma_distribution<double> gam(0.5, 1.0);
    for (int t = 0; t < 100; ++t) {
      const std::size_t k = 2 + rng() % 20, n = 2 + rng() % 9;
      std::vector<std::vector<double>> p(n, std::vector<double>(k));
      for (auto& row : p) {
        double s = 0;
        for (auto& x : row) s += (x = gam(rng) + 1e-12);
        for (auto& x : row) x /= s;
      }
      CHECK(mutual_information(p) >= -1e-9);
    }
  }

  TEST_CASE("start and end terms add up and the most uncertain chunk wins") {
    Words w("hot cold", {"which ?"});
    DropoutEnsembleConfig cfg;
    cfg.passes = 2;
    const auto s0 = derive_seed(0, "c", 0);
    testing::ScriptedReader rd([&](auto, std::span<const reader::TokenId> c, std::optional<std::uint64_t> seed) {
      std::vector<double> st(c.size(), -INFINITY), en(c.size(), std::log(1.0 / static_cast<double>(c.size())));
      REQUIRE(seed.has_value());
      st[*seed == s0 ? 0 : 1] = 0.0;
      return reader::SpanDistributions{st, en};
    });
    ScoringModels m;
    m.reader = &rd;
    m.reader_tokenizer = &w.tok;
    CHECK(score_bald(m, {"c", w.text, "which ?"}, cfg).raw == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    // now the end head disagrees too
    testing::ScriptedReader both([&](auto, std::span<const reader::TokenId> c, std::optional<std::uint64_t> seed) {
      std::vector<double> st(c.size(), -INFINITY), en(c.size(), -INFINITY);
      st[*seed == s0 ? 0 : 1] = 0.0;
      en[*seed == s0 ? 1 : 0] = 0.0;
      return reader::SpanDistributions{st, en};
    });
    m.reader = &both;
    CHECK(score_bald(m, {"c", w.text, "which ?"}, cfg).raw == doctest::Approx(2 * std::log(2.0)).epsilon(1e-12));
  }

  TEST_CASE("multi-chunk candidates take the max over chunks") {
    std::string text;
    for (int i = 0; i < 40; ++i) text += (i == 30 ? "hot " : "w" + std::to_string(i) + " ");
    Words w(text, {"which ?"});
    const auto hot = w.ids("hot")[0];
    DropoutEnsembleConfig cfg;
    cfg.passes = 2;
    const auto s0 = derive_seed(0, "c", 0);
    std::size_t chunks_seen = 0;
    testing::ScriptedReader rd([&](auto, std::span<const reader::TokenId> c, std::optional<std::uint64_t> seed) {
      ++chunks_seen;
      std::vector<double> uni(c.size(), std::log(1.0 / static_cast<double>(c.size())));
      auto it = std::find(c.begin(), c.end(), hot);
      if (it == c.end() || it + 1 == c.end()) return reader::SpanDistributions{uni, uni};
      std::vector<double> st(c.size(), -INFINITY);
      st[static_cast<std::size_t>(it - c.begin()) + (*seed == s0 ? 0 : 1)] = 0.0;
      return reader::SpanDistributions{st, uni};
    });
    ScoringModels m;
    m.reader = &rd;
    m.reader_tokenizer = &w.tok;
    m.reader_cfg.max_input_tokens = 16;
    m.reader_cfg.stride = 4;
    auto r = score_bald(m, {"c", w.text, "which ?"}, cfg);
    CHECK(chunks_seen / 2 > 1);
    CHECK(r.raw == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK_THROWS_AS(score_bald(m, {"c", w.text, ""}, cfg), PreconditionError);
  }
}

TEST_SUITE("ranking") {
  TEST_CASE("fifty of two hundred") {
    std::mt19937_64 rng(1);
    std::vector<AcquisitionScore> s;
    for (int i = 0; i < 200; ++i) s.push_back(scored("c" + std::to_string(i), std::round(std::normal_distribution<>(0, 1)(rng) * 10) / 10));
    auto sel = rank_and_select(s, 50);
    REQUIRE(sel.size() == 50);
    std::set<std::string> chosen(sel.begin(), sel.end());
    double min_sel = INFINITY, max_rest = -INFINITY;
    for (auto& x : s) {
      if (chosen.count(x.candidate_id))
        min_sel = std::min(min_sel, x.priority);
      else
        max_rest = std::max(max_rest, x.priority);
    }
    CHECK(min_sel >= max_rest);

    auto shuffled = s;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    CHECK(rank_and_select(shuffled, 50) == sel);
  }

  TEST_CASE("pool-sized and oversized requests select everything") {
    std::vector<AcquisitionScore> s{scored("b", 1), scored("a", 2), scored("c", 0)};
    auto all = rank_and_select(s, 3);
    CHECK(std::set<std::string>(all.begin(), all.end()) == std::set<std::string>{"a", "b", "c"});
    CHECK(rank_and_select(s, 10).size() == 3);
    CHECK(rank_and_select(s, 0).empty());
  }

  TEST_CASE("ties at the cut go to the smaller id") {
    std::vector<AcquisitionScore> s{scored("m", 1), scored("k", 1), scored("z", 1), scored("top", 5)};
    CHECK(rank_and_select(s, 2) == std::vector<std::string>{"top", "k"});
  }

  TEST_CASE("least-confident candidates get maximal priority for every strategy") {
    struct Case { Strategy s; double least; std::vector<double> others; };
    std::vector<Case> cases{{Strategy::sp, -3.0, {-0.1, -1.0}},   {Strategy::dsp, -2.5, {-0.3, -2.4}},
                            {Strategy::ls, 0.05, {0.9, 0.4}},     {Strategy::rt, 0.0, {1.0, 0.5}},
                            {Strategy::dsp_rt, 0.01, {1.9, 0.6}}, {Strategy::bald, 1.2, {0.0, 0.3}}};
    for (const auto& c : cases) {
      for (double o : c.others) CHECK(priority_for(c.s, c.least) > priority_for(c.s, o));
    }
  }

  TEST_CASE("random scores are seeded uniforms") {
    CHECK(random_score(3, "a", 0) == random_score(3, "a", 0));
    CHECK(random_score(3, "a", 0) != random_score(3, "a", 1));
    CHECK(random_score(3, "a", 0) != random_score(4, "a", 0));
    double lo = 1, hi = 0;
    for (int i = 0; i < 1000; ++i) {
      double x = random_score(1, "c" + std::to_string(i), 2);
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
    CHECK(lo >= 0.0);
    CHECK(hi < 1.0);
    CHECK(hi - lo > 0.9);
  }

  TEST_CASE("strategy names round trip") {
    for (Strategy s : {Strategy::sp, Strategy::dsp, Strategy::ls, Strategy::rt, Strategy::dsp_rt, Strategy::bald,
                       Strategy::random})
      CHECK(strategy_from_string(to_string(s)) == s);
    CHECK_THROWS_AS(strategy_from_string("entropy"), ConfigError);
  }
}

TEST_CASE("parallel pool scoring matches sequential and dumps round trip") {
  const auto w = testing::make_toy_world(80, 5);
  auto g = testing::train_toy_generator(w, 1);
  auto rd = reader::make_reader_backend("toy-span-reader", w.tokenizer->vocab_size(), 2);
  auto m = gen_models(*g, *w.tokenizer);
  m.reader = rd.get();
  m.reader_tokenizer = w.tokenizer.get();
  DropoutEnsembleConfig cfg;
  cfg.passes = 3;
  cfg.base_seed = 21;
  std::vector<Candidate> cands;
  for (std::size_t i = 0; i < 9; ++i)
    cands.push_back({w.source.samples[i].id, w.doc(w.source.samples[i].document_id).text, w.source.samples[i].question});
  for (Strategy s : {Strategy::dsp, Strategy::ls, Strategy::bald}) {
    auto a = score_pool(s, m, cands, cfg, 2, 1);
    auto b = score_pool(s, m, cands, cfg, 2, 3);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].candidate_id == b[i].candidate_id);
      CHECK(a[i].raw_score == b[i].raw_score);
      CHECK(a[i].priority == priority_for(s, a[i].raw_score));
      CHECK(a[i].iteration == 2);
    }
    auto path = std::filesystem::temp_directory_path() / "alqa_scores.jsonl";
    write_score_dump(path, a);
    auto back = read_score_dump(path);
    REQUIRE(back.size() == a.size());
    CHECK(back[3].raw_score == a[3].raw_score);
    CHECK(back[3].strategy == s);
    CHECK(back[3].passes == 3);
    CHECK(back[3].flags == a[3].flags);
    std::filesystem::remove(path);
  }
  CHECK_FALSE(g->stochastic());
  CHECK_FALSE(rd->stochastic());
}
