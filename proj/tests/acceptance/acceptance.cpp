// Acceptance run: one PASS/FAIL line per criterion, exit status 1 when any criterion fails.
// `acceptance <key>...` runs a subset; keys are printed in brackets.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "alqa/acquisition/acquisition.hpp"
#include "alqa/common/hash.hpp"
#include "alqa/corpus/metrics.hpp"
#include "alqa/generator/qa2s.hpp"
#include "alqa/loop/loop.hpp"
#include "alqa/reader/reader.hpp"
#include "alqa/report/report.hpp"
#include "alqa/run/commands.hpp"
#include "alqa/synthesis/synthesis.hpp"
#include "scripted_backend.hpp"
#include "scripted_reader.hpp"
#include "stub_world.hpp"
#include "toy_world.hpp"

using namespace alqa;
namespace fs = std::filesystem;
using acquisition::Strategy;
using corpus::kAnswerClose;
using corpus::kQuestionClose;
using corpus::kQuestionOpen;
using generator::TokenId;
using generator::TokenIds;

namespace {

// ---------------------------------------------------------------- harness

class Checker {
 public:
  void expect(bool ok, const std::string& what) {
    ++checks_;
    if (!ok && failures_.size() < 8) failures_.push_back(what);
    if (!ok) ++failed_;
  }
  void near(double got, double want, double tol, const std::string& what) {
    std::ostringstream o;
    o.precision(17);
    o << what << ": got " << got << " want " << want;
    expect(std::abs(got - want) <= tol, o.str());
  }
  std::size_t checks() const { return checks_; }
  std::size_t failed() const { return failed_; }
  const std::vector<std::string>& failures() const { return failures_; }
  std::vector<std::string> notes;

 private:
  std::size_t checks_ = 0, failed_ = 0;
  std::vector<std::string> failures_;
};

struct Criterion {
  std::string key;
  std::string title;
  double limit_s;
  std::function<void(Checker&)> run;
};

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / "alqa_acceptance" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string numbered(const std::string& stem, int n) {
  std::string s;
  for (int i = 0; i < n; ++i) s += (i ? " " : "") + stem + std::to_string(i);
  return s;
}

double unit(std::uint64_t h) { return static_cast<double>(h >> 11) * 0x1.0p-53; }

// ---------------------------------------------------------------- independent oracles

double oracle_entropy(const std::vector<double>& p) {
  double h = 0;
  for (double x : p)
    if (x > 0) h -= x * std::log(x);
  return h;
}

double oracle_mutual_information(const std::vector<std::vector<double>>& passes) {
  std::vector<double> mean(passes[0].size(), 0.0);
  double mean_h = 0;
  for (const auto& p : passes) {
    for (std::size_t i = 0; i < p.size(); ++i) mean[i] += p[i] / static_cast<double>(passes.size());
    mean_h += oracle_entropy(p) / static_cast<double>(passes.size());
  }
  return oracle_entropy(mean) - mean_h;
}

// Exact unigram matching over token lists without repeats.
double oracle_meteor(const std::vector<std::string>& h, const std::vector<std::string>& r) {
  std::vector<long> ref_pos(h.size(), -1);
  std::size_t m = 0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    auto it = std::find(r.begin(), r.end(), h[i]);
    if (it != r.end()) ref_pos[i] = it - r.begin(), ++m;
  }
  if (m == 0) return 0.0;
  std::size_t chunks = 0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    if (ref_pos[i] < 0) continue;
    const bool continues = i > 0 && ref_pos[i - 1] >= 0 && ref_pos[i] == ref_pos[i - 1] + 1;
    if (!continues) ++chunks;
  }
  const double P = static_cast<double>(m) / h.size(), R = static_cast<double>(m) / r.size();
  const double fmean = P * R / (0.9 * P + 0.1 * R);
  return fmean * (1.0 - 0.5 * std::pow(static_cast<double>(chunks) / m, 3.0));
}

std::vector<std::string> words(const std::string& s) {
  std::istringstream in(s);
  return {std::istream_iterator<std::string>(in), std::istream_iterator<std::string>()};
}

// Lower-case, drop punctuation and English articles, collapse whitespace.
std::string oracle_normalize(const std::string& s) {
  std::string t;
  for (unsigned char c : s)
    if (!std::ispunct(c)) t += static_cast<char>(std::tolower(c));
  std::string out;
  for (const auto& w : words(t)) {
    if (w == "a" || w == "an" || w == "the") continue;
    out += (out.empty() ? "" : " ") + w;
  }
  return out;
}

// Token F1 over bags of words.
double oracle_f1(const std::vector<std::string>& pred, const std::vector<std::string>& gold) {
  std::map<std::string, int> g;
  for (const auto& w : gold) ++g[w];
  int common = 0;
  for (const auto& w : pred)
    if (g[w]-- > 0) ++common;
  if (common == 0) return 0.0;
  const double p = static_cast<double>(common) / pred.size(), r = static_cast<double>(common) / gold.size();
  return 2 * p * r / (p + r);
}

// ---------------------------------------------------------------- scoring fixtures

struct Words {
  std::string text;
  corpus::VocabTokenizer tok;
  explicit Words(std::string t) : text(std::move(t)) {
    std::vector<std::string> texts{text};
    tok.fit(texts);
  }
  TokenIds ids(std::string_view s) const { return tok.encode(s); }
};

// One scripted pass: the answer is context tokens [start, start + len); step t of the
// answer puts probability p[t] on its target and spreads the rest uniformly.
struct Pass {
  std::size_t start = 1, len = 1;
  std::vector<double> p;  // len + 1 entries, the last for the closing marker
};

using PassFn = std::function<Pass(std::optional<std::uint64_t>)>;

testing::ScriptedGenerator pass_generator(std::size_t vocab, PassFn pass) {
  return testing::ScriptedGenerator(vocab, [vocab, pass](std::span<const TokenId> src, std::span<const TokenId> prefix,
                                                         std::optional<std::uint64_t> seed) {
    std::vector<double> lp(vocab, -INFINITY);
    if (prefix.front() == kQuestionOpen) {
      lp[prefix.size() == 1 ? src[0] : kQuestionClose] = 0.0;
      return lp;
    }
    const Pass ps = pass(seed);
    const std::size_t t = prefix.size() - 1;
    const TokenId target = t < ps.len ? src[ps.start + t] : kAnswerClose;
    const double p = ps.p[std::min(t, ps.len)];
    const double rest = p < 1.0 ? std::log((1.0 - p) / static_cast<double>(vocab - 1)) : -INFINITY;
    std::fill(lp.begin(), lp.end(), rest);
    lp[target] = std::log(p);
    return lp;
  });
}

double pass_sp(const Pass& p) {
  double s = 0;
  for (double x : p.p) s += std::log(x);
  return s / static_cast<double>(p.p.size());
}

std::vector<std::string> pass_words(const Words& w, const Pass& p) {
  const auto all = words(w.text);
  return {all.begin() + static_cast<long>(p.start), all.begin() + static_cast<long>(p.start + p.len)};
}

Pass seeded_pass(std::uint64_t salt, std::optional<std::uint64_t> seed, std::size_t ctx_tokens, bool vary_span) {
  const std::uint64_t h = splitmix64(salt ^ (seed ? *seed : 0x5eed));
  Pass p;
  const std::uint64_t span_h = vary_span ? h : splitmix64(salt);
  p.len = 1 + span_h % 4;
  p.start = 1 + (span_h >> 8) % (ctx_tokens - p.len - 1);
  for (std::size_t t = 0; t <= p.len; ++t) p.p.push_back(0.6 + 0.39 * unit(splitmix64(h + t + 1)));
  return p;
}

acquisition::ScoringModels gen_models(generator::GenerationBackend& g, const corpus::Tokenizer& tok) {
  acquisition::ScoringModels m;
  m.generator = &g;
  m.generator_tokenizer = &tok;
  m.max_answer_tokens = 8;
  return m;
}

testing::ScriptedReader span_reader(std::size_t s, std::size_t e) {
  return testing::ScriptedReader([s, e](auto, std::span<const reader::TokenId> c, auto) {
    std::vector<double> st(c.size(), -INFINITY), en(c.size(), -INFINITY);
    st[s] = 0.0;
    en[e] = 0.0;
    return reader::SpanDistributions{st, en};
  });
}

void scoring_oracles(Checker& ck) {
  const double tol = 1e-9;
  std::mt19937_64 rng(101);
  const Words w(numbered("t", 12));
  const std::size_t V = w.tok.vocab_size();

  for (int trial = 0; trial < 40; ++trial) {
    const std::uint64_t salt = rng();
    const std::string id = "c" + std::to_string(trial);
    const acquisition::Candidate cand{id, w.text, ""};
    acquisition::DropoutEnsembleConfig cfg;
    cfg.passes = 2 + rng() % 6;
    cfg.base_seed = rng();

    // SP: mean step log-prob of the deterministic answer, closing marker included
    {
      auto g = pass_generator(V, [&](auto seed) { return seeded_pass(salt, seed, 12, true); });
      const auto m = gen_models(g, w.tok);
      ck.near(acquisition::score_sp(m, cand).raw, pass_sp(seeded_pass(salt, std::nullopt, 12, true)), tol,
              "SP " + id);
    }
    // D-SP: mean over passes of each pass's SP
    {
      auto g = pass_generator(V, [&](auto seed) { return seeded_pass(salt, seed, 12, false); });
      const auto m = gen_models(g, w.tok);
      double oracle = 0;
      for (std::size_t i = 0; i < cfg.passes; ++i)
        oracle += pass_sp(seeded_pass(salt, derive_seed(cfg.base_seed, id, i), 12, false)) / cfg.passes;
      ck.near(acquisition::score_dsp(m, cand, cfg).raw, oracle, tol, "D-SP " + id);

      acquisition::DropoutEnsembleConfig single;
      single.passes = 1;
      single.dropout = false;
      ck.near(acquisition::score_dsp(m, cand, single).raw, acquisition::score_sp(m, cand).raw, tol,
              "D-SP(N=1, no dropout) = SP " + id);
    }
    // LS: mean METEOR over ordered pairs of distinct passes
    {
      auto g = pass_generator(V, [&](auto seed) { return seeded_pass(salt, seed, 12, true); });
      const auto m = gen_models(g, w.tok);
      std::vector<std::vector<std::string>> answers;
      for (std::size_t i = 0; i < cfg.passes; ++i)
        answers.push_back(pass_words(w, seeded_pass(salt, derive_seed(cfg.base_seed, id, i), 12, true)));
      double oracle = 0;
      for (std::size_t i = 0; i < answers.size(); ++i)
        for (std::size_t j = 0; j < answers.size(); ++j)
          if (i != j) oracle += oracle_meteor(answers[i], answers[j]);
      oracle /= static_cast<double>(answers.size() * (answers.size() - 1));
      ck.near(acquisition::score_ls(m, cand, cfg).raw, oracle, tol, "LS " + id);
    }
    // RT and D-SP+RT: token F1 between the reader's span and the generated answer
    {
      auto g = pass_generator(V, [&](auto seed) { return seeded_pass(salt, seed, 12, false); });
      auto m = gen_models(g, w.tok);
      const std::size_t s = rng() % 12, e = s + rng() % (12 - s);
      auto rd = span_reader(s, e);
      m.reader = &rd;
      m.reader_tokenizer = &w.tok;
      const auto all = words(w.text);
      const std::vector<std::string> predicted(all.begin() + static_cast<long>(s), all.begin() + static_cast<long>(e + 1));
      const double rt = oracle_f1(predicted, pass_words(w, seeded_pass(salt, std::nullopt, 12, false)));
      ck.near(acquisition::score_rt(m, cand).raw, rt, tol, "RT " + id);
      double dsp = 0;
      for (std::size_t i = 0; i < cfg.passes; ++i)
        dsp += pass_sp(seeded_pass(salt, derive_seed(cfg.base_seed, id, i), 12, false)) / cfg.passes;
      ck.near(acquisition::score_dsp_rt(m, cand, cfg).raw, std::exp(8 * dsp) + rt, tol, "D-SP+RT " + id);

      // certain generator: D-SP = 0, so the combination is 1 + RT
      auto certain = pass_generator(V, [&](auto seed) {
        auto p = seeded_pass(salt, seed, 12, false);
        std::fill(p.p.begin(), p.p.end(), 1.0);
        return p;
      });
      auto mc = gen_models(certain, w.tok);
      mc.reader = &rd;
      mc.reader_tokenizer = &w.tok;
      ck.near(acquisition::score_dsp(mc, cand, cfg).raw, 0.0, tol, "D-SP of a certain generator " + id);
      ck.near(acquisition::score_dsp_rt(mc, cand, cfg).raw, 1.0 + rt, tol, "D-SP+RT at D-SP = 0 " + id);
    }
    // BALD through the reader: start and end mutual information over seeded passes
    {
      auto dist = [salt](std::uint64_t seed, std::size_t n, std::uint64_t head) {
        std::vector<double> p(n);
        double z = 0;
        for (std::size_t j = 0; j < n; ++j) z += p[j] = 0.05 + unit(splitmix64(salt ^ seed ^ (head * 1000 + j)));
        for (auto& x : p) x /= z;
        return p;
      };
      testing::ScriptedReader rd([&](auto, std::span<const reader::TokenId> c, std::optional<std::uint64_t> seed) {
        auto lg = [](std::vector<double> p) {
          for (auto& x : p) x = std::log(x);
          return p;
        };
        return reader::SpanDistributions{lg(dist(*seed, c.size(), 1)), lg(dist(*seed, c.size(), 2))};
      });
      acquisition::ScoringModels m;
      m.reader = &rd;
      m.reader_tokenizer = &w.tok;
      std::vector<std::vector<double>> st, en;
      for (std::size_t i = 0; i < cfg.passes; ++i) {
        st.push_back(dist(derive_seed(cfg.base_seed, id, i), 12, 1));
        en.push_back(dist(derive_seed(cfg.base_seed, id, i), 12, 2));
      }
      ck.near(acquisition::score_bald(m, {id, w.text, "t3"}, cfg).raw,
              oracle_mutual_information(st) + oracle_mutual_information(en), tol, "BALD " + id);
    }
  }

  // BALD formula on raw pass sets
  using P = std::vector<std::vector<double>>;
  ck.near(acquisition::mutual_information(P{{0.3, 0.7}, {0.3, 0.7}, {0.3, 0.7}}), 0.0, tol, "BALD identical passes");
  ck.near(acquisition::mutual_information(P{{1.0, 0.0}, {0.0, 1.0}}), std::log(2.0), tol, "BALD (1,0)/(0,1)");
  std::gamma_distribution<double> gam(0.5, 1.0);
  for (int t = 0; t < 300; ++t) {
    const std::size_t k = 2 + rng() % 12, n = 2 + rng() % 8;
    P p(n, std::vector<double>(k));
    for (auto& row : p) {
      double s = 0;
      for (auto& x : row) s += (x = gam(rng) + 1e-12);
      for (auto& x : row) x /= s;
    }
    ck.near(acquisition::mutual_information(p), oracle_mutual_information(p), tol, "BALD random set");
  }
  // METEOR and combination directly
  for (int t = 0; t < 200; ++t) {
    const auto all = words(numbered("v", 10));
    auto pick = [&] {
      const std::size_t a = rng() % 10, b = a + 1 + rng() % (10 - a);
      return std::vector<std::string>(all.begin() + static_cast<long>(a), all.begin() + static_cast<long>(b));
    };
    const auto h = pick(), r = pick();
    ck.near(acquisition::meteor(h, r), oracle_meteor(h, r), tol, "METEOR");
  }
  for (int t = 0; t < 100; ++t) {
    const double d = -3.0 * unit(rng()), r = unit(rng());
    ck.near(acquisition::dsp_rt_combine(d, r), std::exp(8 * d) + r, tol, "exp(8 D-SP) + RT");
  }
  ck.near(acquisition::dsp_rt_combine(0.0, 0.37), 1.37, tol, "combination at D-SP = 0");
}

// ---------------------------------------------------------------- orientation

void selection_orientation(Checker& ck) {
  std::mt19937_64 rng(202);
  const std::vector<Strategy> all{Strategy::sp, Strategy::dsp, Strategy::ls, Strategy::rt,
                                  Strategy::dsp_rt, Strategy::bald, Strategy::random};
  for (Strategy s : all) {
    // least confident first: the smallest raw value, except BALD (largest information)
    // and random (largest uniform draw)
    const bool ascending = s != Strategy::bald && s != Strategy::random;
    std::size_t mismatches = 0;
    for (int set = 0; set < 1000; ++set) {
      const std::size_t size = 1 + rng() % 80, n = rng() % (size + 3);
      std::vector<acquisition::AcquisitionScore> scores;
      for (std::size_t i = 0; i < size; ++i) {
        acquisition::AcquisitionScore a;
        a.candidate_id = "k" + std::to_string(rng() % 100000);
        double raw = std::round(unit(rng()) * 20) / 20;  // coarse grid forces ties
        if (s == Strategy::sp || s == Strategy::dsp) raw = -3 * raw;
        if (s == Strategy::dsp_rt) raw = std::exp(-8 * raw) + std::round(unit(rng()) * 4) / 4;
        a.strategy = s;
        a.raw_score = raw;
        a.priority = acquisition::priority_for(s, raw);
        scores.push_back(a);
      }
      // unique ids keep the tie-break total
      std::set<std::string> seen;
      std::erase_if(scores, [&](const auto& a) { return !seen.insert(a.candidate_id).second; });

      auto sorted = scores;
      std::sort(sorted.begin(), sorted.end(), [&](const auto& a, const auto& b) {
        if (a.raw_score != b.raw_score) return ascending ? a.raw_score < b.raw_score : a.raw_score > b.raw_score;
        return a.candidate_id < b.candidate_id;
      });
      std::vector<std::string> want;
      for (std::size_t i = 0; i < std::min(n, sorted.size()); ++i) want.push_back(sorted[i].candidate_id);
      if (acquisition::rank_and_select(scores, n) != want) ++mismatches;
    }
    ck.expect(mismatches == 0, std::string(acquisition::to_string(s)) + ": " + std::to_string(mismatches) +
                                   " of 1000 sets disagree with the brute-force sorter");
  }
}

// ---------------------------------------------------------------- loop bookkeeping

std::map<std::string, std::string> tree_contents(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    out[fs::relative(e.path(), dir).string()] = std::string(std::istreambuf_iterator<char>(in), {});
  }
  return out;
}

void loop_bookkeeping(Checker& ck) {
  const auto w = testing::make_stub_world(10000);
  const auto cfg = testing::stub_config(4, 50);
  const auto f = testing::stub_factories(w.tokenizer->vocab_size());
  loop::OracleAnnotator oracle(w.pool);
  const auto dir_a = scratch("bookkeeping_a"), dir_b = scratch("bookkeeping_b");
  const auto rec = loop::run_al(f, {w.tokenizer.get(), w.tokenizer.get()}, w.data(), cfg, oracle, dir_a);
  ck.expect(rec.status == loop::ExperimentRecord::Status::completed, "run completes");
  ck.expect(rec.pool.labeled.size() == 200, "|labeled| = " + std::to_string(rec.pool.labeled.size()));

  const auto all_ids = loop::candidate_ids(w.pool, true);
  ck.expect(all_ids.size() == 10000, "10000 candidates");
  const std::set<std::string> universe(all_ids.begin(), all_ids.end());
  std::set<std::string> prev_pool = universe, prev_labeled, union_selected;
  for (int k = 0; k <= 4; ++k) {
    const auto st = loop::PoolState::from_json(read_json_file(dir_a / ("poolstate_" + std::to_string(k) + ".json")));
    std::vector<std::string> both;
    std::set_intersection(st.labeled.begin(), st.labeled.end(), st.pool.begin(), st.pool.end(), std::back_inserter(both));
    ck.expect(both.empty(), "labeled and pool disjoint at step " + std::to_string(k));
    std::set<std::string> un = st.labeled;
    un.insert(st.pool.begin(), st.pool.end());
    ck.expect(un == universe, "labeled + pool cover the candidates at step " + std::to_string(k));
    ck.expect(st.labeled.size() == static_cast<std::size_t>(50 * k), "50k labeled at step " + std::to_string(k));
    if (k > 0) {
      const auto& sel = rec.pool.history.at(k - 1).selected;
      ck.expect(sel.size() == 50, "batch size at step " + std::to_string(k));
      for (const auto& id : sel) {
        ck.expect(prev_pool.count(id) == 1, "selected from the remaining pool: " + id);
        ck.expect(union_selected.insert(id).second, "selected once: " + id);
      }
      std::set<std::string> expect_labeled = prev_labeled;
      expect_labeled.insert(sel.begin(), sel.end());
      ck.expect(st.labeled == expect_labeled, "labeled grows by the selection at step " + std::to_string(k));
    }
    prev_pool = st.pool;
    prev_labeled = st.labeled;
  }

  const auto rec_b = loop::run_al(f, {w.tokenizer.get(), w.tokenizer.get()}, w.data(), cfg, oracle, dir_b);
  const auto ta = tree_contents(dir_a), tb = tree_contents(dir_b);
  ck.expect(ta.size() == tb.size() && ta.size() > 10, "replay writes the same files");
  std::size_t differing = 0;
  for (const auto& [name, bytes] : ta) {
    auto it = tb.find(name);
    if (it == tb.end() || it->second != bytes) {
      ++differing;
      ck.expect(false, "replay differs in " + name);
    }
  }
  ck.notes.push_back(std::to_string(ta.size()) + " files compared, " + std::to_string(differing) + " differ");
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
}

// ---------------------------------------------------------------- filtering

synthesis::SyntheticSample syn(std::string id, std::string doc, double lp) {
  synthesis::SyntheticSample s;
  s.sample.id = std::move(id);
  s.sample.document_id = std::move(doc);
  s.sample.provenance = corpus::Provenance::synthetic;
  s.generator_logprob_sum = lp;
  return s;
}

void filtering(Checker& ck) {
  std::mt19937_64 rng(404);
  // LM score: per-context top 5 by log-prob sum, ties broken by id
  for (int fixture = 0; fixture < 50; ++fixture) {
    std::vector<synthesis::SyntheticSample> s;
    std::set<std::string> ids;
    const int contexts = 1 + static_cast<int>(rng() % 12);
    for (int c = 0; c < contexts; ++c) {
      const int n = 1 + static_cast<int>(rng() % 14);
      for (int i = 0; i < n; ++i) {
        std::string id;
        do id = "s" + std::to_string(rng() % 10000); while (!ids.insert(id).second);
        s.push_back(syn(id, "ctx" + std::to_string(c), -static_cast<double>(rng() % 6) / 2));
      }
    }
    std::shuffle(s.begin(), s.end(), rng);
    std::map<std::string, std::vector<const synthesis::SyntheticSample*>> by_ctx;
    for (const auto& x : s) by_ctx[x.sample.document_id].push_back(&x);
    std::set<std::string> want;
    std::map<std::string, int> want_rank;
    for (auto& [ctx, v] : by_ctx) {
      std::sort(v.begin(), v.end(), [](auto* a, auto* b) {
        if (a->generator_logprob_sum != b->generator_logprob_sum) return a->generator_logprob_sum > b->generator_logprob_sum;
        return a->sample.id < b->sample.id;
      });
      for (std::size_t i = 0; i < v.size(); ++i) {
        want_rank[v[i]->sample.id] = static_cast<int>(i) + 1;
        if (i < 5) want.insert(v[i]->sample.id);
      }
    }
    auto work = s;
    const auto kept = synthesis::lm_score_filter(work, 5);
    std::set<std::string> got;
    for (const auto& k : kept) got.insert(k.sample.id);
    ck.expect(got == want && kept.size() == want.size(), "LM top-5 kept set, fixture " + std::to_string(fixture));
    for (const auto& x : work)
      ck.expect(x.lm_filter_rank && *x.lm_filter_rank == want_rank[x.sample.id], "LM rank of " + x.sample.id);
  }

  // RTcons: the reader's answer is a fixed span per document; keep iff it equals the
  // generated answer after normalization
  corpus::VocabTokenizer tok;
  std::vector<corpus::Document> docs;
  const std::vector<std::string> pieces{"The", "Eiffel", "tower,", "in", "Paris", "is", "an", "old", "iron", "tower", "."};
  for (int d = 0; d < 10; ++d) {
    std::string text;
    for (std::size_t i = 0; i < pieces.size(); ++i) text += (i ? " " : "") + pieces[(i + d) % pieces.size()];
    docs.push_back({"d" + std::to_string(d), text, "target", 0});
  }
  std::vector<std::string> texts;
  for (const auto& d : docs) texts.push_back(d.text);
  texts.push_back("where ?");
  tok.fit(texts);
  corpus::DocumentIndex index;
  for (const auto& d : docs) index[d.id] = &d;

  // document d predicts token positions [d % 4, d % 4 + 1 + d % 3)
  auto predicted_span = [&](std::size_t d) {
    const std::size_t s = d % 4, e = std::min(s + 1 + d % 3, tok.offsets(docs[d].text).size()) - 1;
    return std::pair{s, e};
  };
  std::map<std::string, std::size_t> doc_of_first;
  for (std::size_t d = 0; d < docs.size(); ++d) doc_of_first[docs[d].text] = d;
  testing::ScriptedReader rd([&](auto, std::span<const reader::TokenId> c, auto) {
    // identify the document by its token sequence
    std::size_t d = 0;
    for (std::size_t k = 0; k < docs.size(); ++k)
      if (tok.encode(docs[k].text) == TokenIds(c.begin(), c.end())) d = k;
    auto [s, e] = predicted_span(d);
    std::vector<double> st(c.size(), -INFINITY), en(c.size(), -INFINITY);
    st[s] = 0.0;
    en[e] = 0.0;
    return reader::SpanDistributions{st, en};
  });

  std::vector<synthesis::SyntheticSample> pairs;
  std::vector<bool> oracle_keep;
  for (int i = 0; i < 100; ++i) {
    const std::size_t d = rng() % docs.size();
    const auto& text = docs[d].text;
    const auto offs = tok.offsets(text);
    auto [ps, pe] = predicted_span(d);
    const std::string predicted = text.substr(offs[ps].start, offs[pe].end - offs[ps].start);
    // crafted answers: the predicted span itself, a shifted or widened span, or a random span
    std::size_t s = ps, e = pe;
    switch (i % 4) {
      case 0: break;
      case 1: s = std::min(ps + 1, offs.size() - 1), e = std::max(e, s); break;
      case 2: e = std::min(pe + 1, offs.size() - 1); break;
      default: s = rng() % offs.size(), e = s + rng() % (offs.size() - s); break;
    }
    auto x = syn("p" + std::to_string(i), docs[d].id, -1);
    x.sample.question = "where ?";
    x.sample.answer_span = {offs[s].start, offs[e].end};
    x.sample.answer_text = text.substr(offs[s].start, offs[e].end - offs[s].start);
    pairs.push_back(x);
    oracle_keep.push_back(oracle_normalize(predicted) == oracle_normalize(x.sample.answer_text));
  }
  const auto kept = synthesis::rtcons_filter(pairs, rd, tok, index, {});
  std::set<std::string> kept_ids;
  for (const auto& k : kept) kept_ids.insert(k.sample.id);
  std::size_t n_keep = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    n_keep += oracle_keep[i];
    ck.expect(pairs[i].rtcons_pass.has_value() && *pairs[i].rtcons_pass == oracle_keep[i],
              "RTcons verdict " + pairs[i].sample.id + " answer '" + pairs[i].sample.answer_text + "'");
    ck.expect(kept_ids.count(pairs[i].sample.id) == static_cast<std::size_t>(oracle_keep[i]),
              "RTcons kept set " + pairs[i].sample.id);
  }
  ck.notes.push_back("RTcons oracle keeps " + std::to_string(n_keep) + " of 100");
  ck.expect(n_keep > 10 && n_keep < 90, "crafted pairs exercise both verdicts");
}

// ---------------------------------------------------------------- reader aggregation

std::vector<double> log_normalize(std::vector<double> z) {
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0;
  for (double x : z) s += std::exp(x - m);
  for (double& x : z) x = x - m - std::log(s);
  return z;
}

void reader_aggregation(Checker& ck) {
  std::mt19937_64 rng(505);
  std::size_t multi_chunk = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 64);
    const std::string text = numbered("t", n);
    const std::string question = numbered("q", 1 + static_cast<int>(rng() % 3));
    corpus::VocabTokenizer tok;
    std::vector<std::string> texts{text, question};
    tok.fit(texts);
    const std::uint64_t salt = rng();
    testing::ScriptedReader r([salt](auto, std::span<const reader::TokenId> c, auto) {
      std::vector<double> s(c.size()), e(c.size());
      for (std::size_t j = 0; j < c.size(); ++j) {
        s[j] = 8 * unit(splitmix64(salt ^ static_cast<std::uint64_t>(c[j])));
        e[j] = 8 * unit(splitmix64(~salt ^ static_cast<std::uint64_t>(c[j])));
      }
      return reader::SpanDistributions{log_normalize(s), log_normalize(e)};
    });
    reader::ReaderTrainConfig cfg;
    const auto q = reader::reader_question(question, tok, cfg);
    const std::size_t window = 2 + rng() % 30;
    cfg.max_input_tokens = q.size() + 2 + window;
    cfg.stride = 1 + rng() % (window - 1);
    cfg.max_answer_tokens = 1 + rng() % 8;
    const auto chunks = reader::reader_chunks(text, q.size(), tok, cfg);
    multi_chunk += chunks.size() > 1;

    // exhaustive: every span of every chunk within the length bound
    double best = -INFINITY;
    corpus::CharSpan best_span;
    bool tie = false;
    for (const auto& ch : chunks) {
      const auto d = r.span_distributions(q, ch.context);
      for (std::size_t s = 0; s < ch.context.size(); ++s)
        for (std::size_t e = s; e < ch.context.size() && e - s < cfg.max_answer_tokens; ++e) {
          const double v = d.start[s] + d.end[e];
          const corpus::CharSpan sp{ch.offsets[s].start, ch.offsets[e].end};
          if (v > best) best = v, best_span = sp, tie = false;
          else if (v == best && !(sp == best_span)) tie = true;
        }
    }
    const auto p = reader::predict(r, tok, question, text, cfg);
    ck.near(p.score, best, 1e-12, "aggregated score, trial " + std::to_string(trial));
    if (!tie) {
      ck.expect(p.char_span == best_span, "aggregated span, trial " + std::to_string(trial));
      ck.expect(p.answer_text == text.substr(best_span.start, best_span.end - best_span.start),
                "aggregated answer text, trial " + std::to_string(trial));
    }
  }
  ck.notes.push_back(std::to_string(multi_chunk) + " of 200 inputs span several chunks");
  ck.expect(multi_chunk > 50, "enough multi-chunk inputs");
}

// ---------------------------------------------------------------- EM / F1

void em_f1_table(Checker& ck) {
  struct Row {
    std::string prediction;
    std::vector<std::string> golds;
    double em, f1;
  };
  // worked by hand after normalization (lower case, no punctuation, no articles)
  const std::vector<Row> table{
      {"the cat", {"cat"}, 1, 1},                                // article dropped
      {"Cat!", {"cat"}, 1, 1},                                   // case and punctuation
      {"big red dog", {"red dog"}, 0, 0.8},                      // P 2/3, R 1
      {"blue", {"green", "blue sky"}, 0, 2.0 / 3.0},             // best gold: P 1, R 1/2
      {"x", {"y"}, 0, 0},                                        // disjoint
      {"an apple a day", {"apple day"}, 1, 1},                   // two articles
      {"New York City", {"new york"}, 0, 0.8},                   // P 2/3, R 1
      {"", {"cat"}, 0, 0},                                       // empty prediction
      {"42", {"forty two", "42"}, 1, 1},                         // second gold matches
      {"cat cat dog", {"cat dog dog"}, 0, 2.0 / 3.0},            // clipped counts: 2 common of 3
      {"U.S. army", {"us army"}, 1, 1},                          // punctuation inside a token
      {"a red, red rose", {"the red rose", "rose"}, 0, 0.8},     // max over golds: 0.8 vs 0.5
  };
  std::vector<corpus::QASample> samples;
  std::vector<std::string> preds;
  double em_sum = 0, f1_sum = 0;
  for (std::size_t i = 0; i < table.size(); ++i) {
    const auto& r = table[i];
    ck.near(corpus::max_exact_match(r.prediction, r.golds) ? 1.0 : 0.0, r.em, 0.0, "EM row " + std::to_string(i + 1));
    ck.near(corpus::max_token_f1(r.prediction, r.golds), r.f1, 1e-12, "F1 row " + std::to_string(i + 1));
    corpus::QASample s;
    s.id = "r" + std::to_string(i);
    s.answer_text = r.golds[0];
    s.extra_answers.assign(r.golds.begin() + 1, r.golds.end());
    samples.push_back(s);
    preds.push_back(r.prediction);
    em_sum += r.em;
    f1_sum += r.f1;
  }
  const auto rep = reader::evaluate_predictions(samples, preds);
  ck.near(rep.em, em_sum / 12, 1e-12, "corpus EM");
  ck.near(rep.f1, f1_sum / 12, 1e-12, "corpus F1");
  ck.expect(rep.n == 12, "12 rows scored");
}

// ---------------------------------------------------------------- end to end

std::optional<double> opt(const json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  return j[key].get<double>();
}

void end_to_end(Checker& ck) {
  const auto dir = scratch("toy_pipeline");
  run::MakeToyOptions mt;
  mt.out = dir;
  mt.source_docs = 300;
  mt.target_docs = 500;
  run::make_toy(mt);
  const auto cfg = run::load_run_config(dir / "run.json");
  const run::Invocation inv{{"acceptance"}, false};

  run::train_gen(cfg, {"source"}, inv);
  run::train_reader(cfg, {"source", std::nullopt}, inv);
  const auto full = run::train_reader(cfg, {"target", std::nullopt}, inv);
  const auto full_dev = opt(full, "best_dev_f1");
  ck.expect(full_dev.has_value(), "full-supervision reader reports dev F1");
  if (full_dev) {
    ck.expect(*full_dev >= 0.9, "full-supervision dev F1 " + std::to_string(*full_dev) + " >= 0.9");
    ck.notes.push_back("full-supervision dev F1 " + std::to_string(*full_dev));
  }

  const auto al = run::al_run(cfg, {"al_on_generator", "rt", std::nullopt, false}, inv);
  ck.expect(al["status"] == "completed", "al_on_generator completes");
  ck.expect(al["iterations"].size() == cfg.experiment.recipe.iterations, "every iteration recorded");
  ck.expect(al["labeled"].get<std::size_t>() == cfg.experiment.recipe.iterations * cfg.experiment.recipe.batch,
            "label budget spent exactly");
  const fs::path exp = al["dir"].get<std::string>();
  for (std::size_t k = 1; k <= cfg.experiment.recipe.iterations; ++k)
    ck.expect(fs::exists(exp / "scores" / ("iter_" + std::to_string(k) + ".jsonl")), "score dump " + std::to_string(k));
  const auto record = read_json_file(exp / "record.json");
  std::set<std::string> phases;
  for (const auto& ph : record["phases"]) phases.insert(ph["name"].get<std::string>());
  ck.expect(fs::exists(exp / "synthetic" / "synthetic.jsonl") && fs::file_size(exp / "synthetic" / "synthetic.jsonl") > 0,
            "synthetic corpus written");
  ck.expect(phases.count("train_reader_synthetic") && phases.count("train_reader_annotated"),
            "final reader trained on synthetic then annotated data");
  const auto al_f1 = opt(al, "final_f1");
  ck.expect(al_f1.has_value(), "final F1 reported");

  const auto rnd = run::al_run(cfg, {"random_baseline", std::nullopt, std::nullopt, false}, inv);
  ck.expect(rnd["status"] == "completed", "random baseline completes");
  const auto rnd_f1 = opt(rnd, "final_f1");
  if (al_f1 && rnd_f1) {
    std::ostringstream o;
    o.precision(4);
    o << "eval F1 rt " << *al_f1 << ", random " << *rnd_f1 << ", delta " << std::showpos << (*al_f1 - *rnd_f1);
    ck.notes.push_back(o.str());
  }
}

// ---------------------------------------------------------------- report parity

void report_parity(Checker& ck) {
  const auto w = testing::make_toy_world(300, 10, 9);
  corpus::DocumentIndex index;
  for (const auto& [k, v] : w.docs) index[k] = v;
  std::vector<corpus::QASample> all = w.source.samples;  // 600 samples, two per document
  std::mt19937_64 rng(808);
  std::shuffle(all.begin(), all.end(), rng);
  auto slice = [&](std::size_t from, std::size_t n) {
    return std::vector<corpus::QASample>(all.begin() + static_cast<long>(from), all.begin() + static_cast<long>(from + n));
  };
  std::vector<report::Selection> sel{{"BALD", slice(0, 200)}, {"SP", slice(0, 200)}, {"D-SP", slice(100, 200)},
                                     {"RT", slice(400, 200)}};
  std::shuffle(sel[1].samples.begin(), sel[1].samples.end(), rng);

  reader::ReaderTrainConfig rc;
  rc.max_input_tokens = 48;
  rc.stride = 16;
  generator::GenInputLayout layout;
  const std::vector<report::StatsView> views{report::reader_view("rc", *w.tokenizer, rc),
                                             report::generator_view("qa2s", *w.tokenizer, layout)};
  const auto stats = report::report_sample_stats(sel, index, views);
  ck.expect(stats.rows.size() == 4 && stats.overlap.size() == 4, "one row per selection");

  std::vector<std::set<std::string>> ids;
  for (std::size_t i = 0; i < sel.size(); ++i) {
    const auto& row = stats.rows[i];
    std::set<std::string> contexts;
    std::set<std::string> id_set;
    double ctx = 0, q = 0;
    std::size_t chunks = 0, pairs = 0;
    for (const auto& s : sel[i].samples) {
      contexts.insert(s.document_id);
      id_set.insert(s.id);
      const auto& d = *index.at(s.document_id);
      ctx += static_cast<double>(w.tokenizer->encode(d.text).size());
      q += static_cast<double>(w.tokenizer->encode(s.question).size());
      chunks += reader::reader_chunks(d.text, reader::reader_question(s.question, *w.tokenizer, rc).size(), *w.tokenizer, rc).size();
      pairs += generator::build_training_pairs(s, d, *w.tokenizer, layout).size();
    }
    ids.push_back(id_set);
    const double n = static_cast<double>(sel[i].samples.size());
    ck.expect(row.samples == 200, sel[i].strategy + " size");
    ck.expect(row.unique_contexts == contexts.size(), sel[i].strategy + " unique contexts");
    for (std::size_t v = 0; v < 2; ++v) {
      ck.near(row.mean_context_length[v], ctx / n, 1e-9, sel[i].strategy + " mean context length");
      ck.near(row.mean_question_length[v], q / n, 1e-9, sel[i].strategy + " mean question length");
    }
    ck.expect(row.instances[0] == chunks, sel[i].strategy + " reader instances");
    ck.expect(row.instances[1] == pairs, sel[i].strategy + " generator instances");
  }
  for (std::size_t i = 0; i < sel.size(); ++i) {
    ck.expect(stats.overlap[i][i] == 200, "diagonal " + sel[i].strategy + " = 200");
    for (std::size_t j = 0; j < sel.size(); ++j) {
      std::vector<std::string> both;
      std::set_intersection(ids[i].begin(), ids[i].end(), ids[j].begin(), ids[j].end(), std::back_inserter(both));
      ck.expect(stats.overlap[i][j] == both.size(), "overlap " + sel[i].strategy + "/" + sel[j].strategy);
    }
  }
  ck.expect(stats.overlap[0][1] == 200 && stats.overlap[0][2] == 100 && stats.overlap[0][3] == 0,
            "identical, half-shared and disjoint selections");
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_level(spdlog::level::err);
  const std::vector<Criterion> criteria{
      {"scoring", "scoring formulas match closed-form oracles (tol 1e-9)", 10, scoring_oracles},
      {"orientation", "rank_and_select agrees with a brute-force sorter on 1000 sets per strategy", 10,
       selection_orientation},
      {"bookkeeping", "r=4, n=50 over 10000 candidates: 200 labeled, disjoint, bit-identical replay", 60,
       loop_bookkeeping},
      {"filtering", "LM top-5 per context with id ties; RTcons matches an exact-match oracle on 100 pairs", 10,
       filtering},
      {"aggregation", "best-span aggregation equals exhaustive enumeration on 200 inputs <= 64 tokens", 30,
       reader_aggregation},
      {"metrics", "EM/F1 match a 12-case hand table exactly", 10, em_f1_table},
      {"e2e", "toy al_on_generator pipeline completes; full-supervision dev F1 >= 0.9", 900, end_to_end},
      {"report", "sample statistics and overlap reproduce fixture oracles, diagonal 200", 10, report_parity},
  };
  std::set<std::string> only(argv + 1, argv + argc);
  for (const auto& k : only)
    if (std::none_of(criteria.begin(), criteria.end(), [&](const auto& c) { return c.key == k; })) {
      std::fprintf(stderr, "unknown criterion '%s'\n", k.c_str());
      return 2;
    }
  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.key)) continue;
    Checker ck;
    std::string error;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      c.run(ck);
    } catch (const std::exception& e) {
      error = e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool pass = error.empty() && ck.failed() == 0 && ck.checks() > 0 && secs < c.limit_s;
    failed += !pass;
    std::printf("%s [%s] %s | %zu checks, %zu failed, %.2fs (limit %.0fs)\n", pass ? "PASS" : "FAIL", c.key.c_str(),
                c.title.c_str(), ck.checks(), ck.failed(), secs, c.limit_s);
    for (const auto& n : ck.notes) std::printf("    note: %s\n", n.c_str());
    for (const auto& f : ck.failures()) std::printf("    failed: %s\n", f.c_str());
    if (!error.empty()) std::printf("    error: %s\n", error.c_str());
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}
