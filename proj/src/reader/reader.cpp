#include "alqa/reader/reader.hpp"

#include <cmath>
#include <limits>
#include <thread>

#include <spdlog/spdlog.h>

#include "alqa/common/error.hpp"
#include "alqa/common/hash.hpp"
#include "alqa/corpus/chunking.hpp"
#include "alqa/corpus/metrics.hpp"

namespace alqa::reader {

void ReaderTrainConfig::validate() const {
  if (!(learning_rate > 0)) throw ConfigError("reader: learning_rate must be positive");
  if (batch_size == 0 || epochs == 0) throw ConfigError("reader: batch_size and epochs must be positive");
  if (max_input_tokens == 0 || stride >= max_input_tokens) throw ConfigError("reader: stride must be below max_input_tokens");
  if (question_truncation && *question_truncation == 0) throw ConfigError("reader: question_truncation must be positive");
  if (encoder_weight_decay_to_pretrained < 0) throw ConfigError("reader: encoder_weight_decay_to_pretrained must be >= 0");
  if (max_answer_tokens == 0) throw ConfigError("reader: max_answer_tokens must be positive");
}

std::size_t ReaderTrainConfig::context_window(std::size_t question_tokens) const {
  // question, separator and a leading marker share the input budget with the chunk
  const std::size_t used = question_tokens + 2;
  if (used >= max_input_tokens || max_input_tokens - used <= stride)
    throw PreconditionError("reader: question of " + std::to_string(question_tokens) +
                            " tokens leaves no room for a context chunk; set question_truncation");
  return max_input_tokens - used;
}

void to_json(json& j, const ReaderTrainConfig& v) {
  j = json{{"learning_rate", v.learning_rate},
           {"batch_size", v.batch_size},
           {"epochs", v.epochs},
           {"max_input_tokens", v.max_input_tokens},
           {"stride", v.stride},
           {"encoder_weight_decay_to_pretrained", v.encoder_weight_decay_to_pretrained},
           {"max_answer_tokens", v.max_answer_tokens},
           {"seed", v.seed}};
  j["question_truncation"] = v.question_truncation ? json(*v.question_truncation) : json(nullptr);
}

void from_json(const json& j, ReaderTrainConfig& v) {
  v.learning_rate = j.value("learning_rate", v.learning_rate);
  v.batch_size = j.value("batch_size", v.batch_size);
  v.epochs = j.value("epochs", v.epochs);
  v.max_input_tokens = j.value("max_input_tokens", v.max_input_tokens);
  v.stride = j.value("stride", v.stride);
  v.encoder_weight_decay_to_pretrained = j.value("encoder_weight_decay_to_pretrained", v.encoder_weight_decay_to_pretrained);
  v.max_answer_tokens = j.value("max_answer_tokens", v.max_answer_tokens);
  v.seed = j.value("seed", v.seed);
  if (j.contains("question_truncation") && !j["question_truncation"].is_null())
    v.question_truncation = j["question_truncation"].get<std::size_t>();
}

TokenIds reader_question(std::string_view question, const corpus::Tokenizer& tokenizer, const ReaderTrainConfig& cfg) {
  auto q = tokenizer.encode(question);
  if (cfg.question_truncation && q.size() > *cfg.question_truncation) q.resize(*cfg.question_truncation);
  return q;
}

std::vector<ReaderChunk> reader_chunks(std::string_view text, std::size_t question_tokens,
                                       const corpus::Tokenizer& tokenizer, const ReaderTrainConfig& cfg) {
  auto ids = tokenizer.encode(text);
  auto offsets = tokenizer.offsets(text);
  std::vector<ReaderChunk> out;
  for (const auto& w : corpus::chunk_windows(ids.size(), cfg.context_window(question_tokens), cfg.stride)) {
    ReaderChunk c;
    c.window = w;
    c.context.assign(ids.begin() + static_cast<std::ptrdiff_t>(w.start), ids.begin() + static_cast<std::ptrdiff_t>(w.end));
    c.offsets.assign(offsets.begin() + static_cast<std::ptrdiff_t>(w.start),
                     offsets.begin() + static_cast<std::ptrdiff_t>(w.end));
    out.push_back(std::move(c));
  }
  return out;
}

namespace {

const corpus::Document& find_doc(const corpus::DocumentIndex& docs, const std::string& id) {
  auto it = docs.find(id);
  if (it == docs.end()) throw DataError("unknown document '" + id + "'");
  return *it->second;
}

}  // namespace

std::vector<ReaderExample> build_reader_examples(std::span<const corpus::QASample> samples,
                                                 const corpus::DocumentIndex& docs,
                                                 const corpus::Tokenizer& tokenizer, const ReaderTrainConfig& cfg) {
  std::vector<ReaderExample> out;
  for (const auto& s : samples) {
    const auto& doc = find_doc(docs, s.document_id);
    auto q = reader_question(s.question, tokenizer, cfg);
    auto ids = tokenizer.encode(doc.text);
    auto offsets = tokenizer.offsets(doc.text);
    auto chunks = corpus::chunk_offsets(doc.id, doc.text, offsets, cfg.context_window(q.size()), cfg.stride, s.answer_span);
    for (const auto& c : chunks) {
      if (!c.contains_answer.value_or(false) || !c.answer_tokens || c.answer_tokens->length() == 0) continue;
      ReaderExample ex;
      ex.question = q;
      ex.context.assign(ids.begin() + static_cast<std::ptrdiff_t>(c.window.start),
                        ids.begin() + static_cast<std::ptrdiff_t>(c.window.end));
      ex.start = c.answer_tokens->start;
      ex.end = c.answer_tokens->end - 1;
      out.push_back(std::move(ex));
    }
  }
  return out;
}

BestSpan best_span(std::span<const double> start, std::span<const double> end, std::size_t max_len) {
  if (start.empty() || start.size() != end.size()) throw PreconditionError("best_span: empty or mismatched distributions");
  BestSpan best{0, 0, -std::numeric_limits<double>::infinity()};
  for (std::size_t e = 0; e < end.size(); ++e) {
    const std::size_t lo = e + 1 >= max_len ? e + 1 - max_len : 0;
    for (std::size_t s = lo; s <= e; ++s) {
      const double v = start[s] + end[e];
      if (v > best.score) best = {s, e, v};
    }
  }
  return best;
}

SpanPrediction predict(const ReaderBackend& backend, const corpus::Tokenizer& tokenizer, std::string_view question,
                       std::string_view document, const ReaderTrainConfig& cfg) {
  auto q = reader_question(question, tokenizer, cfg);
  auto chunks = reader_chunks(document, q.size(), tokenizer, cfg);
  if (chunks.empty()) throw PreconditionError("predict: empty document");
  SpanPrediction best;
  best.score = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < chunks.size(); ++i) {
    auto dist = backend.span_distributions(q, chunks[i].context);
    auto b = best_span(dist.start, dist.end, cfg.max_answer_tokens);
    if (b.score > best.score) {
      best.score = b.score;
      best.chunk_index = i;
      best.char_span = {chunks[i].offsets[b.start].start, chunks[i].offsets[b.end].end};
    }
  }
  best.answer_text = std::string(document.substr(best.char_span.start, best.char_span.length()));
  return best;
}

EvalReport evaluate_predictions(std::span<const corpus::QASample> samples, std::span<const std::string> predictions) {
  if (samples.size() != predictions.size()) throw PreconditionError("evaluate_predictions: size mismatch");
  EvalReport r;
  r.n = samples.size();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    auto golds = samples[i].gold_answers();
    SampleEvaluation e{samples[i].id, predictions[i], corpus::max_exact_match(predictions[i], golds) ? 1.0 : 0.0,
                       corpus::max_token_f1(predictions[i], golds)};
    r.em += e.em;
    r.f1 += e.f1;
    r.per_sample.push_back(std::move(e));
  }
  if (r.n) {
    r.em /= static_cast<double>(r.n);
    r.f1 /= static_cast<double>(r.n);
  }
  return r;
}

EvalReport evaluate(const ReaderBackend& backend, const corpus::Tokenizer& tokenizer,
                    std::span<const corpus::QASample> samples, const corpus::DocumentIndex& docs,
                    const ReaderTrainConfig& cfg, std::size_t threads) {
  std::vector<std::string> preds(samples.size());
  for (const auto& s : samples) find_doc(docs, s.document_id);
  auto work = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i)
      preds[i] = predict(backend, tokenizer, samples[i].question, find_doc(docs, samples[i].document_id).text, cfg).answer_text;
  };
  threads = std::max<std::size_t>(1, std::min(threads, samples.size()));
  if (threads == 1) {
    work(0, samples.size());
  } else {
    std::vector<std::thread> pool;
    const std::size_t per = (samples.size() + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t)
      pool.emplace_back(work, t * per, std::min(samples.size(), (t + 1) * per));
    for (auto& th : pool) th.join();
  }
  return evaluate_predictions(samples, preds);
}

void write_eval_report(const EvalReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<json> rows;
  for (const auto& e : report.per_sample)
    rows.push_back({{"id", e.sample_id}, {"prediction", e.prediction}, {"em", e.em}, {"f1", e.f1}});
  write_jsonl(dir / "per_sample.jsonl", rows);
  write_json_file(dir / "report.json",
                  json{{"em", report.em}, {"f1", report.f1}, {"n", report.n}, {"per_sample", "per_sample.jsonl"}});
}

json ReaderTrainLog::to_jsonl_rows() const {
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  json rows = json::array();
  rows.push_back({{"epoch", 0}, {"train_loss", nullptr}, {"dev_f1", opt(initial_dev_f1)}, {"dev_em", nullptr}});
  for (const auto& e : epochs)
    rows.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"dev_f1", opt(e.dev_f1)}, {"dev_em", opt(e.dev_em)}});
  return rows;
}

ReaderTrainLog train_reader(ReaderBackend& backend, const corpus::Tokenizer& tokenizer,
                            std::span<const corpus::QASample> samples, const corpus::DocumentIndex& docs,
                            const ReaderTrainConfig& cfg, std::span<const corpus::QASample> dev,
                            const corpus::DocumentIndex* dev_docs) {
  cfg.validate();
  if (samples.empty()) throw PreconditionError("train_reader: no training samples");
  auto examples = build_reader_examples(samples, docs, tokenizer, cfg);
  if (examples.empty()) throw PreconditionError("train_reader: no trainable chunk");
  const auto& ddocs = dev_docs ? *dev_docs : docs;

  ReaderTrainLog log;
  log.examples = examples.size();
  backend.begin_training();
  std::vector<std::uint8_t> best;
  if (!dev.empty()) {
    log.initial_dev_f1 = evaluate(backend, tokenizer, dev, ddocs, cfg).f1;
    log.best_dev_f1 = log.initial_dev_f1;
    best = backend.snapshot();
  }
  const std::size_t per_epoch = (examples.size() + cfg.batch_size - 1) / cfg.batch_size;
  for (std::size_t e = 1; e <= cfg.epochs; ++e) {
    nn::EpochPlan plan;
    plan.batch_size = cfg.batch_size;
    plan.first_step = (e - 1) * per_epoch;
    plan.learning_rate = [lr = cfg.learning_rate](std::size_t) { return lr; };
    plan.anchor_decay = cfg.encoder_weight_decay_to_pretrained;
    plan.seed = derive_seed(cfg.seed, "reader-epoch", e);
    auto r = backend.train_epoch(examples, plan);
    if (!std::isfinite(r.mean_loss)) throw DivergenceError("train_reader: loss diverged at epoch " + std::to_string(e));
    ReaderTrainLog::Epoch rec{e, r.mean_loss, std::nullopt, std::nullopt};
    if (!dev.empty()) {
      auto rep = evaluate(backend, tokenizer, dev, ddocs, cfg);
      rec.dev_f1 = rep.f1;
      rec.dev_em = rep.em;
      if (rep.f1 > *log.best_dev_f1) {
        log.best_dev_f1 = rep.f1;
        log.best_epoch = e;
        best = backend.snapshot();
      }
      spdlog::info("reader epoch {}/{}: train loss {:.4f}, dev f1 {:.4f}", e, cfg.epochs, r.mean_loss, rep.f1);
    } else {
      log.best_epoch = e;
      spdlog::info("reader epoch {}/{}: train loss {:.4f}", e, cfg.epochs, r.mean_loss);
    }
    log.epochs.push_back(rec);
  }
  if (!dev.empty()) backend.restore(best);
  return log;
}

}  // namespace alqa::reader
