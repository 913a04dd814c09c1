#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "alqa/corpus/tokenizer.hpp"
#include "alqa/corpus/types.hpp"
#include "alqa/generator/backend.hpp"

namespace alqa::generator {

// A tokenized context, truncated to the generator's source budget.
struct ContextView {
  std::string_view text;
  TokenIds ids;
  std::vector<corpus::CharSpan> offsets;
};

ContextView make_context(std::string_view text, const corpus::Tokenizer& tokenizer, std::size_t max_tokens);

// Question segment as it appears inside an answer-step source: <q> question </q>.
TokenIds question_segment(std::span<const TokenId> question);
TokenIds answer_step_source(std::span<const TokenId> context, std::span<const TokenId> question);

// Two pairs per context chunk that contains the answer:
//   chunk -> question </q>         (bos <q>)
//   chunk <q> question </q> -> answer </a>   (bos <a>)
std::vector<TrainingPair> build_training_pairs(const corpus::QASample& sample, const corpus::Document& doc,
                                               const corpus::Tokenizer& tokenizer, const GenInputLayout& layout);

struct GenTrainLog {
  struct Epoch {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double dev_loss = 0.0;
  };
  double initial_dev_loss = 0.0;
  std::vector<Epoch> epochs;
  std::size_t best_epoch = 0;  // 0 means the initial weights were best
  double best_dev_loss = 0.0;

  json to_jsonl_rows() const;
};

enum class TrainStage { source, target };

// Fine-tunes for the stage's epoch budget and leaves the backend at the best-dev-loss weights.
GenTrainLog train_generator(GenerationBackend& backend, std::span<const TrainingPair> train,
                            const GenTrainConfig& cfg, std::span<const TrainingPair> dev,
                            TrainStage stage = TrainStage::target);

enum class DecodeFailure {
  none,
  question_end_missing,
  question_empty,
  answer_end_missing,
  answer_empty,
  answer_not_in_context,
  special_token,
};

std::string_view to_string(DecodeFailure f);

struct GeneratedPair {
  TokenIds question;  // without markers
  TokenIds answer;    // without markers
  std::vector<double> question_logprobs;  // includes the </q> step
  std::vector<double> answer_logprobs;    // includes the </a> step
  corpus::TokenSpan answer_tokens;        // first occurrence in the context
  corpus::CharSpan answer_chars;
  std::string question_text;
  std::string answer_text;  // raw context slice

  double logprob_sum() const;
};

struct GenerationOutcome {
  std::optional<GeneratedPair> pair;
  DecodeFailure failure = DecodeFailure::none;
};

struct QuestionOutcome {
  TokenIds question;  // without markers; empty on failure
  DecodeFailure failure = DecodeFailure::none;
};

QuestionOutcome decode_question(const GenerationBackend& backend, const ContextView& context,
                                const GenInputLayout& layout, const DecodeConfig& cfg, std::uint64_t seed);

// Beam-decodes the answer for a fixed question and applies the answer validity rules.
GenerationOutcome decode_answer(const GenerationBackend& backend, const ContextView& context,
                                std::span<const TokenId> question, const corpus::Tokenizer& tokenizer,
                                const DecodeConfig& cfg);

// Two-step decoding: question from <q> (nucleus sampling or beam per cfg), then answer
// from <a> by beam search over context + decoded question. Outcomes failing the
// validity rules carry no pair.
GenerationOutcome generate_pair(const GenerationBackend& backend, const ContextView& context,
                                const corpus::Tokenizer& tokenizer, const GenInputLayout& layout,
                                const DecodeConfig& cfg, std::uint64_t seed);

// First occurrence of `needle` as a contiguous subsequence.
std::optional<std::size_t> find_subsequence(std::span<const TokenId> haystack, std::span<const TokenId> needle);

// (1/T) sum_t log p(a_t | a_<t, c, q) over the answer tokens plus </a>.
double score_answer_sentence(const GenerationBackend& backend, std::span<const TokenId> context,
                             std::span<const TokenId> question, std::span<const TokenId> answer);

struct AnswerScoringItem {
  TokenIds context;
  TokenIds question;
  TokenIds answer;
};

std::vector<double> score_answer_sentences(const GenerationBackend& backend, std::span<const AnswerScoringItem> items);

double mean_logprob(std::span<const double> logprobs);

}  // namespace alqa::generator
