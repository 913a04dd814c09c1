#include "alqa/generator/config.hpp"

#include "alqa/common/error.hpp"

namespace alqa::generator {

std::size_t GenInputLayout::question_capacity() const {
  std::size_t cap = max_question_tokens - 2;
  if (question_truncation) cap = std::min(cap, *question_truncation);
  return cap;
}

void GenInputLayout::validate() const {
  if (max_source_tokens == 0 || max_total_tokens == 0) throw ConfigError("layout: token budgets must be positive");
  if (max_question_tokens < 3) throw ConfigError("layout: max_question_tokens must leave room for <q> and </q>");
  if (max_source_tokens + max_question_tokens > max_total_tokens)
    throw ConfigError("layout: max_source_tokens + max_question_tokens exceeds max_total_tokens");
  if (question_truncation && *question_truncation == 0) throw ConfigError("layout: question_truncation must be positive");
  if (context_stride >= max_source_tokens) throw ConfigError("layout: context_stride must be below max_source_tokens");
}

void GenTrainConfig::validate() const {
  if (epochs_source == 0 || epochs_target == 0) throw ConfigError("generator: epochs must be positive");
  if (!(learning_rate > 0)) throw ConfigError("generator: learning_rate must be positive");
  if (batch_size == 0) throw ConfigError("generator: batch_size must be positive");
  if (!(warmup_fraction >= 0 && warmup_fraction <= 1)) throw ConfigError("generator: warmup_fraction must lie in [0, 1]");
}

void DecodeConfig::validate() const {
  if (!(nucleus_p > 0 && nucleus_p <= 1)) throw ConfigError("decode: nucleus_p must lie in (0, 1]");
  if (top_k == 0) throw ConfigError("decode: top_k must be positive");
  if (beam_size == 0) throw ConfigError("decode: beam_size must be positive");
  if (max_answer_tokens == 0) throw ConfigError("decode: max_answer_tokens must be positive");
}

void to_json(json& j, const GenInputLayout& v) {
  j = json{{"max_source_tokens", v.max_source_tokens},
           {"max_question_tokens", v.max_question_tokens},
           {"max_total_tokens", v.max_total_tokens},
           {"context_stride", v.context_stride}};
  j["question_truncation"] = v.question_truncation ? json(*v.question_truncation) : json(nullptr);
}

void from_json(const json& j, GenInputLayout& v) {
  v.max_source_tokens = j.value("max_source_tokens", v.max_source_tokens);
  v.max_question_tokens = j.value("max_question_tokens", v.max_question_tokens);
  v.max_total_tokens = j.value("max_total_tokens", v.max_total_tokens);
  v.context_stride = j.value("context_stride", v.context_stride);
  if (j.contains("question_truncation") && !j["question_truncation"].is_null())
    v.question_truncation = j["question_truncation"].get<std::size_t>();
}

void to_json(json& j, const GenTrainConfig& v) {
  j = json{{"epochs_source", v.epochs_source},     {"epochs_target", v.epochs_target},
           {"learning_rate", v.learning_rate},     {"batch_size", v.batch_size},
           {"warmup_fraction", v.warmup_fraction}, {"early_stopping_patience", v.early_stopping_patience},
           {"seed", v.seed}};
}

void from_json(const json& j, GenTrainConfig& v) {
  v.epochs_source = j.value("epochs_source", v.epochs_source);
  v.epochs_target = j.value("epochs_target", v.epochs_target);
  v.learning_rate = j.value("learning_rate", v.learning_rate);
  v.batch_size = j.value("batch_size", v.batch_size);
  v.warmup_fraction = j.value("warmup_fraction", v.warmup_fraction);
  v.early_stopping_patience = j.value("early_stopping_patience", v.early_stopping_patience);
  v.seed = j.value("seed", v.seed);
}

void to_json(json& j, const DecodeConfig& v) {
  j = json{{"question_mode", v.question_mode == QuestionDecoding::nucleus ? "nucleus" : "beam"},
           {"nucleus_p", v.nucleus_p},
           {"top_k", v.top_k},
           {"topk_order", v.order == TopKOrder::topk_then_nucleus ? "topk_first" : "nucleus_first"},
           {"beam_size", v.beam_size},
           {"max_answer_tokens", v.max_answer_tokens}};
}

void from_json(const json& j, DecodeConfig& v) {
  if (j.contains("question_mode")) {
    auto m = j["question_mode"].get<std::string>();
    if (m == "nucleus") v.question_mode = QuestionDecoding::nucleus;
    else if (m == "beam") v.question_mode = QuestionDecoding::beam;
    else throw ConfigError("decode: unknown question_mode '" + m + "'");
  }
  if (j.contains("topk_order")) {
    auto m = j["topk_order"].get<std::string>();
    if (m == "topk_first") v.order = TopKOrder::topk_then_nucleus;
    else if (m == "nucleus_first") v.order = TopKOrder::nucleus_then_topk;
    else throw ConfigError("decode: unknown topk_order '" + m + "'");
  }
  v.nucleus_p = j.value("nucleus_p", v.nucleus_p);
  v.top_k = j.value("top_k", v.top_k);
  v.beam_size = j.value("beam_size", v.beam_size);
  v.max_answer_tokens = j.value("max_answer_tokens", v.max_answer_tokens);
}

}  // namespace alqa::generator
