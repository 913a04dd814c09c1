#include "alqa/acquisition/acquisition.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <random>
#include <thread>

#include <spdlog/spdlog.h>

#include "alqa/common/error.hpp"
#include "alqa/common/hash.hpp"
#include "alqa/corpus/metrics.hpp"
#include "alqa/generator/qa2s.hpp"

namespace alqa::acquisition {

namespace {

const std::map<std::string_view, Strategy> kStrategies{
    {"sp", Strategy::sp},         {"dsp", Strategy::dsp},   {"ls", Strategy::ls},
    {"rt", Strategy::rt},         {"dsp_rt", Strategy::dsp_rt}, {"bald", Strategy::bald},
    {"random", Strategy::random},
};

// Restores deterministic mode on scope exit.
template <class Backend>
struct StochasticScope {
  Backend& b;
  explicit StochasticScope(Backend& backend) : b(backend) {}
  void pass(bool dropout, std::uint64_t seed) { b.set_stochastic(dropout, seed); }
  ~StochasticScope() { b.set_stochastic(false, 0); }
};

void require_generator(const ScoringModels& m, const char* who) {
  if (!m.generator || !m.generator_tokenizer) throw PreconditionError(std::string(who) + ": generator not provided");
  if (m.generator->stochastic()) throw PreconditionError(std::string(who) + ": generator is in stochastic mode");
}

void require_reader(const ScoringModels& m, const char* who) {
  if (!m.reader || !m.reader_tokenizer) throw PreconditionError(std::string(who) + ": reader not provided");
  if (m.reader->stochastic()) throw PreconditionError(std::string(who) + ": reader is in stochastic mode");
}

generator::DecodeConfig beam_config(const ScoringModels& m) {
  generator::DecodeConfig d;
  d.question_mode = generator::QuestionDecoding::beam;
  d.beam_size = m.beam_size;
  d.max_answer_tokens = m.max_answer_tokens;
  return d;
}

// One deterministic QA decode over the context truncated to the source budget.
struct FixedPair {
  generator::ContextView context;
  generator::GenerationOutcome outcome;
};

FixedPair deterministic_pair(const ScoringModels& m, const Candidate& c) {
  FixedPair f{generator::make_context(c.context, *m.generator_tokenizer, m.layout.max_source_tokens), {}};
  f.outcome = generator::generate_pair(*m.generator, f.context, *m.generator_tokenizer, m.layout, beam_config(m), 0);
  return f;
}

std::vector<std::string> failure_flags(generator::DecodeFailure f) {
  return {"decode_failed", std::string(generator::to_string(f))};
}

double rt_of(const ScoringModels& m, const Candidate& c, const generator::GeneratedPair& p) {
  auto pred = reader::predict(*m.reader, *m.reader_tokenizer, p.question_text, c.context, m.reader_cfg);
  return corpus::token_f1(pred.answer_text, p.answer_text);
}

double dsp_of(const ScoringModels& m, const Candidate& c, const FixedPair& f, const DropoutEnsembleConfig& cfg) {
  const auto& p = *f.outcome.pair;
  StochasticScope scope(*m.generator);
  std::vector<double> passes;
  for (std::size_t n = 0; n < cfg.passes; ++n) {
    scope.pass(cfg.dropout, derive_seed(cfg.base_seed, c.id, n));
    passes.push_back(generator::score_answer_sentence(*m.generator, f.context.ids, p.question, p.answer));
  }
  return mean_of(passes);
}

}  // namespace

std::string_view to_string(Strategy s) {
  for (const auto& [k, v] : kStrategies)
    if (v == s) return k;
  return "?";
}

Strategy strategy_from_string(std::string_view s) {
  auto it = kStrategies.find(s);
  if (it == kStrategies.end()) throw ConfigError("unknown strategy '" + std::string(s) + "'");
  return it->second;
}

bool scores_contexts(Strategy s) { return s != Strategy::bald; }
bool needs_generator(Strategy s) { return s != Strategy::bald && s != Strategy::random; }
bool needs_reader(Strategy s) { return s == Strategy::rt || s == Strategy::dsp_rt || s == Strategy::bald; }

double priority_for(Strategy s, double raw) {
  switch (s) {
    case Strategy::bald:
    case Strategy::random:
      return raw;
    default:
      return -raw;
  }
}

json score_to_json(const AcquisitionScore& s) {
  return {{"candidate_id", s.candidate_id}, {"strategy", to_string(s.strategy)}, {"raw_score", s.raw_score},
          {"priority", s.priority},         {"iteration", s.iteration},           {"passes", s.passes},
          {"flags", s.flags}};
}

AcquisitionScore score_from_json(const json& j) {
  AcquisitionScore s;
  s.candidate_id = j.at("candidate_id").get<std::string>();
  s.strategy = strategy_from_string(j.at("strategy").get<std::string>());
  s.raw_score = j.at("raw_score").get<double>();
  s.priority = j.at("priority").get<double>();
  s.iteration = j.at("iteration").get<int>();
  s.passes = j.at("passes").get<std::size_t>();
  s.flags = j.value("flags", std::vector<std::string>{});
  return s;
}

void DropoutEnsembleConfig::validate() const {
  if (passes < 1) throw ValidationError("passes", "dropout ensemble needs at least one pass");
}

void to_json(json& j, const DropoutEnsembleConfig& v) {
  j = {{"passes", v.passes}, {"base_seed", v.base_seed}, {"dropout", v.dropout}};
}

void from_json(const json& j, DropoutEnsembleConfig& v) {
  v.passes = j.value("passes", v.passes);
  v.base_seed = j.value("base_seed", v.base_seed);
  v.dropout = j.value("dropout", v.dropout);
}

double mean_of(std::span<const double> xs) {
  if (xs.empty()) throw PreconditionError("mean_of: empty");
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

double meteor(std::span<const std::string> hyp, std::span<const std::string> ref, const MeteorParams& p) {
  if (hyp.empty() || ref.empty()) return 0.0;
  // Greedy alignment: prefer the reference position continuing the current chunk,
  // otherwise the earliest unused identical word.
  std::vector<bool> used(ref.size(), false);
  std::vector<long> aligned(hyp.size(), -1);
  long prev = -2;
  for (std::size_t i = 0; i < hyp.size(); ++i) {
    long pick = -1;
    if (prev >= -1 && prev + 1 < static_cast<long>(ref.size()) && !used[prev + 1] && ref[prev + 1] == hyp[i])
      pick = prev + 1;
    for (std::size_t j = 0; pick < 0 && j < ref.size(); ++j)
      if (!used[j] && ref[j] == hyp[i]) pick = static_cast<long>(j);
    if (pick >= 0) {
      used[pick] = true;
      aligned[i] = pick;
    }
    prev = pick >= 0 ? pick : -2;
  }
  std::size_t matches = 0, chunks = 0;
  long last = -2;
  for (long a : aligned) {
    if (a < 0) {
      last = -2;
      continue;
    }
    ++matches;
    if (a != last + 1 || last < 0) ++chunks;
    last = a;
  }
  if (matches == 0) return 0.0;
  const double P = static_cast<double>(matches) / static_cast<double>(hyp.size());
  const double R = static_cast<double>(matches) / static_cast<double>(ref.size());
  const double fmean = P * R / (p.alpha * P + (1.0 - p.alpha) * R);
  const double penalty = p.gamma * std::pow(static_cast<double>(chunks) / static_cast<double>(matches), p.beta);
  return fmean * (1.0 - penalty);
}

double lexical_similarity(std::span<const std::vector<std::string>> answers, const SimilarityFn& sim) {
  const std::size_t n = answers.size();
  if (n < 2) throw PreconditionError("lexical_similarity: needs at least two answers");
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j || answers[i].empty() || answers[j].empty()) continue;
      s += sim ? sim(answers[i], answers[j]) : meteor(answers[i], answers[j]);
    }
  return s / static_cast<double>(n * (n - 1));
}

double dsp_rt_combine(double dsp, double rt) { return std::exp(8.0 * dsp) + rt; }

double entropy(std::span<const double> probs) {
  double h = 0.0;
  for (double p : probs)
    if (p > 0.0) h -= p * std::log(p);
  return h;
}

double mutual_information(std::span<const std::vector<double>> passes) {
  if (passes.empty()) throw PreconditionError("mutual_information: no passes");
  const std::size_t k = passes.front().size();
  std::vector<double> mean(k, 0.0);
  double mean_h = 0.0;
  for (const auto& p : passes) {
    if (p.size() != k) throw PreconditionError("mutual_information: pass lengths differ");
    for (std::size_t i = 0; i < k; ++i) mean[i] += p[i];
    mean_h += entropy(p);
  }
  const double n = static_cast<double>(passes.size());
  for (double& x : mean) x /= n;
  return entropy(mean) - mean_h / n;
}

ScoreResult score_sp(const ScoringModels& m, const Candidate& c) {
  require_generator(m, "score_sp");
  auto f = deterministic_pair(m, c);
  if (!f.outcome.pair) return {kDecodeFailureLogprob, 1, failure_flags(f.outcome.failure)};
  return {generator::mean_logprob(f.outcome.pair->answer_logprobs), 1, {}};
}

ScoreResult score_dsp(const ScoringModels& m, const Candidate& c, const DropoutEnsembleConfig& cfg) {
  require_generator(m, "score_dsp");
  cfg.validate();
  auto f = deterministic_pair(m, c);
  if (!f.outcome.pair) return {kDecodeFailureLogprob, cfg.passes, failure_flags(f.outcome.failure)};
  return {dsp_of(m, c, f, cfg), cfg.passes, {}};
}

ScoreResult score_ls(const ScoringModels& m, const Candidate& c, const DropoutEnsembleConfig& cfg,
                     const SimilarityFn& sim) {
  require_generator(m, "score_ls");
  cfg.validate();
  if (cfg.passes < 2) throw PreconditionError("score_ls: needs at least two passes");
  auto ctx = generator::make_context(c.context, *m.generator_tokenizer, m.layout.max_source_tokens);
  const auto dc = beam_config(m);
  auto q = generator::decode_question(*m.generator, ctx, m.layout, dc, 0);
  if (q.failure != generator::DecodeFailure::none) return {0.0, cfg.passes, failure_flags(q.failure)};

  std::vector<std::vector<std::string>> answers;
  std::size_t failed = 0;
  {
    StochasticScope scope(*m.generator);
    for (std::size_t n = 0; n < cfg.passes; ++n) {
      scope.pass(cfg.dropout, derive_seed(cfg.base_seed, c.id, n));
      auto out = generator::decode_answer(*m.generator, ctx, q.question, *m.generator_tokenizer, dc);
      if (out.pair) {
        answers.push_back(corpus::normalized_tokens(out.pair->answer_text));
      } else {
        answers.emplace_back();
        ++failed;
      }
    }
  }
  ScoreResult r{lexical_similarity(answers, sim), cfg.passes, {}};
  if (failed > 0) r.flags.push_back("failed_passes:" + std::to_string(failed));
  if (failed == cfg.passes) r.flags.insert(r.flags.begin(), "decode_failed");
  return r;
}

ScoreResult score_rt(const ScoringModels& m, const Candidate& c) {
  require_generator(m, "score_rt");
  require_reader(m, "score_rt");
  auto f = deterministic_pair(m, c);
  if (!f.outcome.pair) return {0.0, 1, failure_flags(f.outcome.failure)};
  return {rt_of(m, c, *f.outcome.pair), 1, {}};
}

ScoreResult score_dsp_rt(const ScoringModels& m, const Candidate& c, const DropoutEnsembleConfig& cfg) {
  require_generator(m, "score_dsp_rt");
  require_reader(m, "score_dsp_rt");
  cfg.validate();
  auto f = deterministic_pair(m, c);
  if (!f.outcome.pair)
    return {dsp_rt_combine(kDecodeFailureLogprob, 0.0), cfg.passes, failure_flags(f.outcome.failure)};
  return {dsp_rt_combine(dsp_of(m, c, f, cfg), rt_of(m, c, *f.outcome.pair)), cfg.passes, {}};
}

ScoreResult score_bald(const ScoringModels& m, const Candidate& c, const DropoutEnsembleConfig& cfg) {
  require_reader(m, "score_bald");
  cfg.validate();
  if (c.question.empty()) throw PreconditionError("score_bald: candidate " + c.id + " has no question");
  auto q = reader::reader_question(c.question, *m.reader_tokenizer, m.reader_cfg);
  auto chunks = reader::reader_chunks(c.context, q.size(), *m.reader_tokenizer, m.reader_cfg);
  if (chunks.empty()) throw PreconditionError("score_bald: candidate " + c.id + " has an empty context");

  // passes[chunk] holds per-pass probabilities for start and end
  std::vector<std::vector<std::vector<double>>> starts(chunks.size()), ends(chunks.size());
  {
    StochasticScope scope(*m.reader);
    for (std::size_t n = 0; n < cfg.passes; ++n) {
      scope.pass(cfg.dropout, derive_seed(cfg.base_seed, c.id, n));
      for (std::size_t k = 0; k < chunks.size(); ++k) {
        auto d = m.reader->span_distributions(q, chunks[k].context);
        for (double& x : d.start) x = std::exp(x);
        for (double& x : d.end) x = std::exp(x);
        starts[k].push_back(std::move(d.start));
        ends[k].push_back(std::move(d.end));
      }
    }
  }
  double best = -INFINITY;
  for (std::size_t k = 0; k < chunks.size(); ++k)
    best = std::max(best, mutual_information(starts[k]) + mutual_information(ends[k]));
  return {best, cfg.passes, {}};
}

double random_score(std::uint64_t base_seed, std::string_view candidate_id, int iteration) {
  std::mt19937_64 rng(derive_seed(base_seed, candidate_id, static_cast<std::uint64_t>(iteration)));
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

AcquisitionScore score_candidate(Strategy s, const ScoringModels& m, const Candidate& c,
                                 const DropoutEnsembleConfig& cfg, int iteration) {
  ScoreResult r;
  switch (s) {
    case Strategy::sp: r = score_sp(m, c); break;
    case Strategy::dsp: r = score_dsp(m, c, cfg); break;
    case Strategy::ls: r = score_ls(m, c, cfg); break;
    case Strategy::rt: r = score_rt(m, c); break;
    case Strategy::dsp_rt: r = score_dsp_rt(m, c, cfg); break;
    case Strategy::bald: r = score_bald(m, c, cfg); break;
    case Strategy::random: r = {random_score(cfg.base_seed, c.id, iteration), 0, {}}; break;
  }
  return {c.id, s, r.raw, priority_for(s, r.raw), iteration, r.passes, std::move(r.flags)};
}

std::vector<AcquisitionScore> score_pool(Strategy s, const ScoringModels& m, std::span<const Candidate> candidates,
                                         const DropoutEnsembleConfig& cfg, int iteration, std::size_t workers) {
  std::vector<AcquisitionScore> out(candidates.size());
  workers = std::max<std::size_t>(1, std::min(workers, candidates.size()));
  if (workers == 1) {
    for (std::size_t i = 0; i < candidates.size(); ++i) out[i] = score_candidate(s, m, candidates[i], cfg, iteration);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> threads;
    for (std::size_t w = 0; w < workers; ++w)
      threads.emplace_back([&, w] {
        try {
          ScoringModels local = m;
          generator::GenerationBackendPtr g;
          reader::ReaderBackendPtr r;
          if (m.generator) local.generator = (g = m.generator->clone()).get();
          if (m.reader) local.reader = (r = m.reader->clone()).get();
          for (std::size_t i; (i = next++) < candidates.size();)
            out[i] = score_candidate(s, local, candidates[i], cfg, iteration);
        } catch (...) {
          errors[w] = std::current_exception();
          next = candidates.size();
        }
      });
    for (auto& t : threads) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  std::size_t failed = std::count_if(out.begin(), out.end(), [](const AcquisitionScore& a) {
    return !a.flags.empty() && a.flags.front() == "decode_failed";
  });
  if (failed > 0) spdlog::info("score_pool[{}]: {} of {} candidates flagged decode_failed", to_string(s), failed, out.size());
  return out;
}

std::vector<std::string> rank_and_select(std::span<const AcquisitionScore> scores, std::size_t n) {
  if (n > scores.size())
    spdlog::warn("rank_and_select: requested {} but the pool holds {}; selecting all", n, scores.size());
  std::vector<const AcquisitionScore*> order;
  order.reserve(scores.size());
  for (const auto& s : scores) order.push_back(&s);
  std::sort(order.begin(), order.end(), [](const AcquisitionScore* a, const AcquisitionScore* b) {
    if (a->priority != b->priority) return a->priority > b->priority;
    return a->candidate_id < b->candidate_id;
  });
  n = std::min(n, order.size());
  std::vector<std::string> ids;
  ids.reserve(n);
  for (std::size_t i = 0; i < n; ++i) ids.push_back(order[i]->candidate_id);
  return ids;
}

void write_score_dump(const std::filesystem::path& path, std::span<const AcquisitionScore> scores) {
  std::vector<json> rows;
  rows.reserve(scores.size());
  for (const auto& s : scores) rows.push_back(score_to_json(s));
  write_jsonl(path, rows);
}

void append_score_dump(const std::filesystem::path& path, std::span<const AcquisitionScore> scores) {
  for (const auto& s : scores) append_jsonl(path, score_to_json(s));
}

std::vector<AcquisitionScore> read_score_dump(const std::filesystem::path& path) {
  std::vector<AcquisitionScore> out;
  for (const auto& row : read_jsonl(path)) out.push_back(score_from_json(row));
  return out;
}

}  // namespace alqa::acquisition
