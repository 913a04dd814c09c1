#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>

#include "alqa/common/jsonl.hpp"

namespace alqa::generator {

// Token budgets of the generator input. The question budget covers the question
// segment including its <q> and </q> markers, so an answer-step source
// (context + question segment) never exceeds max_total_tokens.
struct GenInputLayout {
  std::size_t max_source_tokens = 724;
  std::size_t max_question_tokens = 300;
  std::size_t max_total_tokens = 1024;
  std::optional<std::size_t> question_truncation;
  std::size_t context_stride = 128;  // window overlap when chunking training contexts

  // Question tokens that fit between the markers.
  std::size_t question_capacity() const;
  void validate() const;
};

struct GenTrainConfig {
  std::size_t epochs_source = 5;
  std::size_t epochs_target = 10;
  double learning_rate = 3e-5;
  std::size_t batch_size = 24;
  double warmup_fraction = 0.10;
  std::size_t early_stopping_patience = 3;  // 0 disables stopping; the best-dev checkpoint is kept either way
  std::uint64_t seed = 0;

  void validate() const;
};

enum class QuestionDecoding { nucleus, beam };
enum class TopKOrder { topk_then_nucleus, nucleus_then_topk };

struct DecodeConfig {
  QuestionDecoding question_mode = QuestionDecoding::nucleus;
  double nucleus_p = 0.95;
  std::size_t top_k = 20;
  TopKOrder order = TopKOrder::topk_then_nucleus;
  std::size_t beam_size = 10;
  std::size_t max_answer_tokens = 300;

  void validate() const;
};

void to_json(json& j, const GenInputLayout& v);
void from_json(const json& j, GenInputLayout& v);
void to_json(json& j, const GenTrainConfig& v);
void from_json(const json& j, GenTrainConfig& v);
void to_json(json& j, const DecodeConfig& v);
void from_json(const json& j, DecodeConfig& v);

}  // namespace alqa::generator
