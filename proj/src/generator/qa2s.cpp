#include "alqa/generator/qa2s.hpp"

#include <cmath>
#include <map>

#include <spdlog/spdlog.h>

#include "alqa/common/error.hpp"
#include "alqa/common/hash.hpp"
#include "alqa/corpus/chunking.hpp"
#include "alqa/nn/nn.hpp"

namespace alqa::generator {

using corpus::kAnswerClose;
using corpus::kAnswerOpen;
using corpus::kQuestionClose;
using corpus::kQuestionOpen;

ContextView make_context(std::string_view text, const corpus::Tokenizer& tokenizer, std::size_t max_tokens) {
  ContextView v{text, tokenizer.encode(text), tokenizer.offsets(text)};
  if (v.ids.size() > max_tokens) {
    v.ids.resize(max_tokens);
    v.offsets.resize(max_tokens);
  }
  return v;
}

TokenIds question_segment(std::span<const TokenId> question) {
  TokenIds out;
  out.reserve(question.size() + 2);
  out.push_back(kQuestionOpen);
  out.insert(out.end(), question.begin(), question.end());
  out.push_back(kQuestionClose);
  return out;
}

TokenIds answer_step_source(std::span<const TokenId> context, std::span<const TokenId> question) {
  TokenIds out(context.begin(), context.end());
  auto seg = question_segment(question);
  out.insert(out.end(), seg.begin(), seg.end());
  return out;
}

std::vector<TrainingPair> build_training_pairs(const corpus::QASample& sample, const corpus::Document& doc,
                                               const corpus::Tokenizer& tokenizer, const GenInputLayout& layout) {
  if (!corpus::span_invariant_holds(doc.text, sample))
    throw PreconditionError("build_training_pairs: span invariant violated for sample " + sample.id);
  auto ids = tokenizer.encode(doc.text);
  auto offsets = tokenizer.offsets(doc.text);
  auto chunks = corpus::chunk_offsets(doc.id, doc.text, offsets, layout.max_source_tokens, layout.context_stride,
                                      sample.answer_span);
  auto question = tokenizer.encode(sample.question);
  if (question.size() > layout.question_capacity()) question.resize(layout.question_capacity());

  std::vector<TrainingPair> pairs;
  for (const auto& c : chunks) {
    if (!c.contains_answer.value_or(false) || !c.answer_tokens) continue;
    TokenIds src(ids.begin() + static_cast<std::ptrdiff_t>(c.window.start),
                 ids.begin() + static_cast<std::ptrdiff_t>(c.window.end));
    TrainingPair qp{TrainingPair::Kind::question, src, kQuestionOpen, question};
    qp.target.push_back(kQuestionClose);
    TrainingPair ap{TrainingPair::Kind::answer, answer_step_source(src, question), kAnswerOpen, {}};
    ap.target.assign(src.begin() + static_cast<std::ptrdiff_t>(c.answer_tokens->start),
                     src.begin() + static_cast<std::ptrdiff_t>(c.answer_tokens->end));
    ap.target.push_back(kAnswerClose);
    pairs.push_back(std::move(qp));
    pairs.push_back(std::move(ap));
  }
  if (pairs.empty()) spdlog::warn("sample {}: answer lies in no context chunk, skipped", sample.id);
  return pairs;
}

json GenTrainLog::to_jsonl_rows() const {
  json rows = json::array();
  rows.push_back({{"epoch", 0}, {"train_loss", nullptr}, {"dev_loss", initial_dev_loss}});
  for (const auto& e : epochs) rows.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"dev_loss", e.dev_loss}});
  return rows;
}

GenTrainLog train_generator(GenerationBackend& backend, std::span<const TrainingPair> train,
                            const GenTrainConfig& cfg, std::span<const TrainingPair> dev, TrainStage stage) {
  cfg.validate();
  if (train.empty()) throw PreconditionError("train_generator: no training pairs");
  if (dev.empty()) throw PreconditionError("train_generator: dev set is empty");
  const std::size_t epochs = stage == TrainStage::source ? cfg.epochs_source : cfg.epochs_target;
  const std::size_t per_epoch = (train.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total = per_epoch * epochs;

  backend.begin_training();
  GenTrainLog log;
  log.initial_dev_loss = backend.loss(dev);
  if (!std::isfinite(log.initial_dev_loss)) throw DivergenceError("train_generator: initial dev loss is not finite");
  log.best_dev_loss = log.initial_dev_loss;
  auto best = backend.snapshot();
  std::size_t since_best = 0;

  for (std::size_t e = 1; e <= epochs; ++e) {
    EpochPlan plan;
    plan.batch_size = cfg.batch_size;
    plan.first_step = (e - 1) * per_epoch;
    plan.learning_rate = [&cfg, total](std::size_t step) {
      return nn::warmup_linear_lr(cfg.learning_rate, step, total, cfg.warmup_fraction);
    };
    plan.seed = derive_seed(cfg.seed, "generator-epoch", e);
    auto r = backend.train_epoch(train, plan);
    double dl = backend.loss(dev);
    if (!std::isfinite(dl) || !std::isfinite(r.mean_loss))
      throw DivergenceError("train_generator: loss diverged at epoch " + std::to_string(e) +
                            " (train " + std::to_string(r.mean_loss) + ", dev " + std::to_string(dl) + ")");
    log.epochs.push_back({e, r.mean_loss, dl});
    spdlog::info("generator epoch {}/{}: train loss {:.4f}, dev loss {:.4f}", e, epochs, r.mean_loss, dl);
    if (dl < log.best_dev_loss) {
      log.best_dev_loss = dl;
      log.best_epoch = e;
      best = backend.snapshot();
      since_best = 0;
    } else if (cfg.early_stopping_patience && ++since_best >= cfg.early_stopping_patience) {
      spdlog::info("generator: early stop after epoch {}, best epoch {}", e, log.best_epoch);
      break;
    }
  }
  backend.restore(best);
  return log;
}

std::string_view to_string(DecodeFailure f) {
  switch (f) {
    case DecodeFailure::none: return "none";
    case DecodeFailure::question_end_missing: return "question_end_missing";
    case DecodeFailure::question_empty: return "question_empty";
    case DecodeFailure::answer_end_missing: return "answer_end_missing";
    case DecodeFailure::answer_empty: return "answer_empty";
    case DecodeFailure::answer_not_in_context: return "answer_not_in_context";
    case DecodeFailure::special_token: return "special_token";
  }
  return "unknown";
}

double GeneratedPair::logprob_sum() const {
  double s = 0.0;
  for (double x : question_logprobs) s += x;
  for (double x : answer_logprobs) s += x;
  return s;
}

std::optional<std::size_t> find_subsequence(std::span<const TokenId> haystack, std::span<const TokenId> needle) {
  if (needle.empty() || needle.size() > haystack.size()) return std::nullopt;
  for (std::size_t i = 0; i + needle.size() <= haystack.size(); ++i)
    if (std::equal(needle.begin(), needle.end(), haystack.begin() + static_cast<std::ptrdiff_t>(i))) return i;
  return std::nullopt;
}

namespace {

bool has_marker(std::span<const TokenId> ids) {
  for (TokenId t : ids)
    if (t < corpus::kSpecialCount && t != corpus::kUnk) return true;
  return false;
}

GenerationOutcome fail(DecodeFailure f) { return {std::nullopt, f}; }

}  // namespace

QuestionOutcome decode_question(const GenerationBackend& backend, const ContextView& context,
                                const GenInputLayout& layout, const DecodeConfig& cfg, std::uint64_t seed) {
  if (context.ids.size() > layout.max_source_tokens)
    throw PreconditionError("generate_pair: context has " + std::to_string(context.ids.size()) +
                            " tokens, budget is " + std::to_string(layout.max_source_tokens));
  const std::size_t q_steps = layout.max_question_tokens - 1;  // content plus </q>
  TokenIds q = cfg.question_mode == QuestionDecoding::nucleus
                   ? backend.sample(context.ids, kQuestionOpen, cfg, q_steps, kQuestionClose, seed)
                   : backend.beam_decode(context.ids, kQuestionOpen, cfg.beam_size, q_steps, kQuestionClose);
  if (q.empty() || q.back() != kQuestionClose) return {{}, DecodeFailure::question_end_missing};
  q.pop_back();
  if (q.empty()) return {{}, DecodeFailure::question_empty};
  if (has_marker(q)) return {{}, DecodeFailure::special_token};
  return {std::move(q), DecodeFailure::none};
}

GenerationOutcome decode_answer(const GenerationBackend& backend, const ContextView& context,
                                std::span<const TokenId> question, const corpus::Tokenizer& tokenizer,
                                const DecodeConfig& cfg) {
  auto src = answer_step_source(context.ids, question);
  TokenIds a = backend.beam_decode(src, kAnswerOpen, cfg.beam_size, cfg.max_answer_tokens, kAnswerClose);
  if (a.empty() || a.back() != kAnswerClose) return fail(DecodeFailure::answer_end_missing);
  a.pop_back();
  if (a.empty()) return fail(DecodeFailure::answer_empty);
  if (has_marker(a)) return fail(DecodeFailure::special_token);
  auto pos = find_subsequence(context.ids, a);
  if (!pos) return fail(DecodeFailure::answer_not_in_context);

  GeneratedPair p;
  p.question.assign(question.begin(), question.end());
  p.answer = a;
  TokenIds qt = p.question;
  qt.push_back(kQuestionClose);
  p.question_logprobs = backend.sequence_logprobs(context.ids, kQuestionOpen, qt);
  TokenIds at = a;
  at.push_back(kAnswerClose);
  p.answer_logprobs = backend.sequence_logprobs(src, kAnswerOpen, at);
  p.answer_tokens = {*pos, *pos + a.size()};
  p.answer_chars = {context.offsets[*pos].start, context.offsets[*pos + a.size() - 1].end};
  p.answer_text = std::string(context.text.substr(p.answer_chars.start, p.answer_chars.length()));
  p.question_text = tokenizer.decode(p.question);
  return {std::move(p), DecodeFailure::none};
}

GenerationOutcome generate_pair(const GenerationBackend& backend, const ContextView& context,
                                const corpus::Tokenizer& tokenizer, const GenInputLayout& layout,
                                const DecodeConfig& cfg, std::uint64_t seed) {
  auto q = decode_question(backend, context, layout, cfg, seed);
  if (q.failure != DecodeFailure::none) return fail(q.failure);
  return decode_answer(backend, context, q.question, tokenizer, cfg);
}

double mean_logprob(std::span<const double> logprobs) {
  if (logprobs.empty()) throw PreconditionError("mean_logprob: empty sequence");
  double s = 0.0;
  for (double x : logprobs) s += x;
  return s / static_cast<double>(logprobs.size());
}

double score_answer_sentence(const GenerationBackend& backend, std::span<const TokenId> context,
                             std::span<const TokenId> question, std::span<const TokenId> answer) {
  if (answer.empty()) throw PreconditionError("score_answer_sentence: zero-length answer");
  TokenIds target(answer.begin(), answer.end());
  target.push_back(kAnswerClose);
  return mean_logprob(backend.sequence_logprobs(answer_step_source(context, question), kAnswerOpen, target));
}

std::vector<double> score_answer_sentences(const GenerationBackend& backend,
                                           std::span<const AnswerScoringItem> items) {
  // Items sharing a source reuse one encoding.
  std::map<TokenIds, std::unique_ptr<EncodedSource>> encoded;
  std::vector<double> out;
  out.reserve(items.size());
  for (const auto& it : items) {
    if (it.answer.empty()) throw PreconditionError("score_answer_sentences: zero-length answer");
    auto src = answer_step_source(it.context, it.question);
    auto found = encoded.find(src);
    if (found == encoded.end()) found = encoded.emplace(src, backend.encode(src)).first;
    TokenIds prefix{kAnswerOpen};
    double s = 0.0;
    for (std::size_t t = 0; t <= it.answer.size(); ++t) {
      TokenId next = t < it.answer.size() ? it.answer[t] : kAnswerClose;
      s += backend.next_logprobs(*found->second, prefix)[static_cast<std::size_t>(next)];
      prefix.push_back(next);
    }
    out.push_back(s / static_cast<double>(it.answer.size() + 1));
  }
  return out;
}

}  // namespace alqa::generator
