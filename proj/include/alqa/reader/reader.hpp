#pragma once

#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "alqa/corpus/io.hpp"
#include "alqa/corpus/tokenizer.hpp"
#include "alqa/corpus/types.hpp"
#include "alqa/reader/backend.hpp"

namespace alqa::reader {

struct ReaderTrainConfig {
  double learning_rate = 3e-5;
  std::size_t batch_size = 24;
  std::size_t epochs = 3;
  std::size_t max_input_tokens = 512;  // question + markers + context chunk
  std::size_t stride = 128;
  std::optional<std::size_t> question_truncation;
  double encoder_weight_decay_to_pretrained = 1e-7;
  std::size_t max_answer_tokens = 384;
  std::uint64_t seed = 0;

  void validate() const;
  // Context tokens per chunk for a question of `question_tokens` tokens.
  std::size_t context_window(std::size_t question_tokens) const;
};

void to_json(json& j, const ReaderTrainConfig& v);
void from_json(const json& j, ReaderTrainConfig& v);

struct ReaderChunk {
  corpus::TokenSpan window;  // token range in the full document
  TokenIds context;
  std::vector<corpus::CharSpan> offsets;  // byte spans in the document text
};

TokenIds reader_question(std::string_view question, const corpus::Tokenizer& tokenizer, const ReaderTrainConfig& cfg);

std::vector<ReaderChunk> reader_chunks(std::string_view text, std::size_t question_tokens,
                                       const corpus::Tokenizer& tokenizer, const ReaderTrainConfig& cfg);

// Positive examples: one per chunk that holds the full answer. Samples whose answer
// lies in no chunk contribute nothing.
std::vector<ReaderExample> build_reader_examples(std::span<const corpus::QASample> samples,
                                                 const corpus::DocumentIndex& docs,
                                                 const corpus::Tokenizer& tokenizer, const ReaderTrainConfig& cfg);

struct SpanPrediction {
  std::string answer_text;
  corpus::CharSpan char_span;
  double score = 0.0;  // start log-prob + end log-prob
  std::size_t chunk_index = 0;
};

struct BestSpan {
  std::size_t start = 0;
  std::size_t end = 0;  // inclusive
  double score = 0.0;
};

// argmax of start[s] + end[e] over s <= e, e - s < max_len.
BestSpan best_span(std::span<const double> start, std::span<const double> end, std::size_t max_len);

SpanPrediction predict(const ReaderBackend& backend, const corpus::Tokenizer& tokenizer, std::string_view question,
                       std::string_view document, const ReaderTrainConfig& cfg);

struct SampleEvaluation {
  std::string sample_id;
  std::string prediction;
  double em = 0.0;
  double f1 = 0.0;
};

struct EvalReport {
  double em = 0.0;
  double f1 = 0.0;
  std::size_t n = 0;
  std::vector<SampleEvaluation> per_sample;
};

EvalReport evaluate_predictions(std::span<const corpus::QASample> samples, std::span<const std::string> predictions);

EvalReport evaluate(const ReaderBackend& backend, const corpus::Tokenizer& tokenizer,
                    std::span<const corpus::QASample> samples, const corpus::DocumentIndex& docs,
                    const ReaderTrainConfig& cfg, std::size_t threads = 1);

// Writes report.json {em, f1, n, per_sample} and per_sample.jsonl under `dir`.
void write_eval_report(const EvalReport& report, const std::filesystem::path& dir);

struct ReaderTrainLog {
  struct Epoch {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    std::optional<double> dev_f1;
    std::optional<double> dev_em;
  };
  std::optional<double> initial_dev_f1;
  std::vector<Epoch> epochs;
  std::size_t best_epoch = 0;
  std::optional<double> best_dev_f1;
  std::size_t examples = 0;

  json to_jsonl_rows() const;
};

// Fine-tunes from the backend's current state and keeps the best dev-F1 epoch
// (the last epoch when `dev` is empty). Successive calls continue from the previous state.
ReaderTrainLog train_reader(ReaderBackend& backend, const corpus::Tokenizer& tokenizer,
                            std::span<const corpus::QASample> samples, const corpus::DocumentIndex& docs,
                            const ReaderTrainConfig& cfg, std::span<const corpus::QASample> dev = {},
                            const corpus::DocumentIndex* dev_docs = nullptr);

}  // namespace alqa::reader
