#include "alqa/synthesis/synthesis.hpp"

#include <algorithm>
#include <thread>
#include <unordered_map>

#include <spdlog/spdlog.h>

#include "alqa/common/error.hpp"
#include "alqa/corpus/metrics.hpp"

namespace alqa::synthesis {

FilterMode filter_mode_from_string(std::string_view s) {
  if (s == "none") return FilterMode::none;
  if (s == "lm") return FilterMode::lm;
  if (s == "rtcons") return FilterMode::rtcons;
  if (s == "both") return FilterMode::both;
  throw ConfigError("unknown filter mode '" + std::string(s) + "'");
}

std::string_view to_string(FilterMode m) {
  switch (m) {
    case FilterMode::none: return "none";
    case FilterMode::lm: return "lm";
    case FilterMode::rtcons: return "rtcons";
    case FilterMode::both: return "both";
  }
  return "none";
}

void SynthesisConfig::validate() const {
  if (max_documents == 0 || min_context_tokens == 0 || questions_per_context == 0 || lm_filter_top_n == 0)
    throw ConfigError("synthesis: counts must be positive");
  if (!(rtcons_f1_threshold >= 0 && rtcons_f1_threshold <= 1)) throw ConfigError("synthesis: rtcons_f1_threshold must lie in [0, 1]");
  if (workers == 0) throw ConfigError("synthesis: workers must be positive");
}

void to_json(json& j, const SynthesisConfig& v) {
  j = json{{"max_documents", v.max_documents},
           {"min_context_tokens", v.min_context_tokens},
           {"questions_per_context", v.questions_per_context},
           {"lm_filter_top_n", v.lm_filter_top_n},
           {"filter_mode", to_string(v.filter_mode)},
           {"lm_scope", v.lm_scope == LmScope::per_context ? "per_context" : "global"},
           {"rtcons_match", v.rtcons_match == RtconsMatch::exact ? "exact" : "f1_threshold"},
           {"rtcons_f1_threshold", v.rtcons_f1_threshold},
           {"seed", v.seed},
           {"workers", v.workers}};
}

void from_json(const json& j, SynthesisConfig& v) {
  v.max_documents = j.value("max_documents", v.max_documents);
  v.min_context_tokens = j.value("min_context_tokens", v.min_context_tokens);
  v.questions_per_context = j.value("questions_per_context", v.questions_per_context);
  v.lm_filter_top_n = j.value("lm_filter_top_n", v.lm_filter_top_n);
  if (j.contains("filter_mode")) v.filter_mode = filter_mode_from_string(j["filter_mode"].get<std::string>());
  if (j.contains("lm_scope")) {
    auto s = j["lm_scope"].get<std::string>();
    if (s == "per_context") v.lm_scope = LmScope::per_context;
    else if (s == "global") v.lm_scope = LmScope::global;
    else throw ConfigError("unknown lm_scope '" + s + "'");
  }
  if (j.contains("rtcons_match")) {
    auto s = j["rtcons_match"].get<std::string>();
    if (s == "exact") v.rtcons_match = RtconsMatch::exact;
    else if (s == "f1_threshold") v.rtcons_match = RtconsMatch::f1_threshold;
    else throw ConfigError("unknown rtcons_match '" + s + "'");
  }
  v.rtcons_f1_threshold = j.value("rtcons_f1_threshold", v.rtcons_f1_threshold);
  v.seed = j.value("seed", v.seed);
  v.workers = j.value("workers", v.workers);
}

json GenerationReport::to_json() const {
  return json{{"documents_seen", documents_seen},       {"documents_skipped", documents_skipped},
              {"documents_processed", documents_processed}, {"pairs_attempted", pairs_attempted},
              {"pairs_valid", pairs_valid},             {"rejection_reasons", rejection_reasons}};
}

std::uint64_t question_seed(std::uint64_t base, std::size_t context_index, std::size_t questions_per_context,
                            std::size_t i) {
  return base + static_cast<std::uint64_t>(context_index) * questions_per_context + i;
}

namespace {

struct Task {
  std::size_t context_index;
  const corpus::Document* doc;
};

struct Partial {
  std::vector<SyntheticSample> samples;
  GenerationReport report;
};

void run_tasks(const generator::GenerationBackend& backend, std::span<const Task> tasks,
               const corpus::Tokenizer& tokenizer, const SynthesisConfig& cfg, const generator::GenInputLayout& layout,
               const generator::DecodeConfig& decode, std::vector<Partial>& out, std::size_t stride,
               std::size_t offset) {
  for (std::size_t t = offset; t < tasks.size(); t += stride) {
    const auto& task = tasks[t];
    auto& part = out[t];
    auto ctx = generator::make_context(task.doc->text, tokenizer, layout.max_source_tokens);
    for (std::size_t i = 0; i < cfg.questions_per_context; ++i) {
      ++part.report.pairs_attempted;
      auto seed = question_seed(cfg.seed, task.context_index, cfg.questions_per_context, i);
      auto res = generator::generate_pair(backend, ctx, tokenizer, layout, decode, seed);
      if (!res.pair) {
        ++part.report.rejection_reasons[std::string(generator::to_string(res.failure))];
        continue;
      }
      ++part.report.pairs_valid;
      SyntheticSample s;
      s.sample.id = "syn-" + task.doc->id + "-" + std::to_string(i);
      s.sample.document_id = task.doc->id;
      s.sample.question = res.pair->question_text;
      s.sample.answer_text = res.pair->answer_text;
      s.sample.answer_span = res.pair->answer_chars;
      s.sample.provenance = corpus::Provenance::synthetic;
      s.sample.domain = task.doc->domain;
      s.generator_logprob_sum = res.pair->logprob_sum();
      part.samples.push_back(std::move(s));
    }
  }
}

}  // namespace

SynthesisResult synthesize_corpus(const generator::GenerationBackend& backend, std::span<const corpus::Document> documents,
                                  const corpus::Tokenizer& tokenizer, const SynthesisConfig& cfg,
                                  const generator::GenInputLayout& layout, const generator::DecodeConfig& decode) {
  cfg.validate();
  SynthesisResult result;
  auto& rep = result.report;
  std::vector<Task> tasks;
  rep.documents_seen = std::min(documents.size(), cfg.max_documents);
  for (std::size_t i = 0; i < rep.documents_seen; ++i) {
    if (tokenizer.count(documents[i].text) < cfg.min_context_tokens) {
      ++rep.documents_skipped;
      continue;
    }
    tasks.push_back({i, &documents[i]});
  }
  rep.documents_processed = tasks.size();
  if (tasks.empty()) throw NoEligibleDocumentsError(rep);

  std::vector<Partial> parts(tasks.size());
  const std::size_t workers = std::min(cfg.workers, tasks.size());
  if (workers <= 1) {
    run_tasks(backend, tasks, tokenizer, cfg, layout, decode, parts, 1, 0);
  } else {
    std::vector<generator::GenerationBackendPtr> clones;
    for (std::size_t w = 0; w < workers; ++w) clones.push_back(backend.clone());
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w] { run_tasks(*clones[w], tasks, tokenizer, cfg, layout, decode, parts, workers, w); });
    for (auto& th : pool) th.join();
  }
  for (auto& p : parts) {
    rep.pairs_attempted += p.report.pairs_attempted;
    rep.pairs_valid += p.report.pairs_valid;
    for (const auto& [k, v] : p.report.rejection_reasons) rep.rejection_reasons[k] += v;
    for (auto& s : p.samples) result.samples.push_back(std::move(s));
  }
  spdlog::info("synthesis: {} documents seen, {} skipped, {}/{} pairs valid", rep.documents_seen,
               rep.documents_skipped, rep.pairs_valid, rep.pairs_attempted);
  return result;
}

std::vector<SyntheticSample> lm_score_filter(std::vector<SyntheticSample>& samples, std::size_t top_n, LmScope scope) {
  std::unordered_map<std::string, std::vector<std::size_t>> groups;
  std::vector<std::string> group_order;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const std::string key = scope == LmScope::per_context ? samples[i].sample.document_id : std::string();
    auto [it, fresh] = groups.try_emplace(key);
    if (fresh) group_order.push_back(key);
    it->second.push_back(i);
  }
  std::vector<bool> keep(samples.size(), false);
  for (const auto& key : group_order) {
    auto& idx = groups[key];
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      if (samples[a].generator_logprob_sum != samples[b].generator_logprob_sum)
        return samples[a].generator_logprob_sum > samples[b].generator_logprob_sum;
      return samples[a].sample.id < samples[b].sample.id;
    });
    for (std::size_t r = 0; r < idx.size(); ++r) {
      samples[idx[r]].lm_filter_rank = static_cast<int>(r + 1);
      keep[idx[r]] = r < top_n;
    }
  }
  std::vector<SyntheticSample> out;
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (keep[i]) out.push_back(samples[i]);
  return out;
}

std::vector<SyntheticSample> rtcons_filter(std::vector<SyntheticSample>& samples, const reader::ReaderBackend& reader,
                                           const corpus::Tokenizer& reader_tokenizer, const corpus::DocumentIndex& docs,
                                           const reader::ReaderTrainConfig& reader_cfg, const RtconsOptions& options,
                                           RtconsReport* report) {
  RtconsReport rep;
  std::vector<SyntheticSample> out;
  for (auto& s : samples) {
    ++rep.checked;
    std::string predicted;
    try {
      auto it = docs.find(s.sample.document_id);
      if (it == docs.end()) throw DataError("unknown document '" + s.sample.document_id + "'");
      predicted = reader::predict(reader, reader_tokenizer, s.sample.question, it->second->text, reader_cfg).answer_text;
    } catch (const Error& e) {
      spdlog::warn("rtcons: prediction failed for {}: {}", s.sample.id, e.what());
      s.rtcons_pass.reset();
      ++rep.prediction_failures;
      continue;
    }
    const bool pass = options.match == RtconsMatch::exact
                          ? corpus::exact_match(predicted, s.sample.answer_text)
                          : corpus::token_f1(predicted, s.sample.answer_text) >= options.f1_threshold;
    s.rtcons_pass = pass;
    if (pass) {
      ++rep.kept;
      out.push_back(s);
    }
  }
  if (report) *report = rep;
  return out;
}

json FilterReport::to_json() const {
  return json{{"input", input},
              {"after_lm", after_lm},
              {"output", output},
              {"rtcons", {{"checked", rtcons.checked}, {"kept", rtcons.kept}, {"prediction_failures", rtcons.prediction_failures}}}};
}

std::vector<SyntheticSample> apply_filters(std::vector<SyntheticSample>& samples, const SynthesisConfig& cfg,
                                           const FilterContext& ctx, FilterReport* report) {
  FilterReport rep;
  rep.input = samples.size();
  std::vector<SyntheticSample> current;
  if (cfg.filter_mode == FilterMode::lm || cfg.filter_mode == FilterMode::both) {
    current = lm_score_filter(samples, cfg.lm_filter_top_n, cfg.lm_scope);
  } else {
    current = samples;
  }
  rep.after_lm = current.size();
  if (cfg.filter_mode == FilterMode::rtcons || cfg.filter_mode == FilterMode::both) {
    if (!ctx.reader || !ctx.reader_tokenizer || !ctx.docs) throw PreconditionError("apply_filters: RTcons needs a fitted reader");
    auto kept = rtcons_filter(current, *ctx.reader, *ctx.reader_tokenizer, *ctx.docs, ctx.reader_cfg,
                              {cfg.rtcons_match, cfg.rtcons_f1_threshold}, &rep.rtcons);
    // carry verdicts back to the full list so stored corpora keep them inline
    std::unordered_map<std::string, std::optional<bool>> verdicts;
    for (const auto& s : current) verdicts[s.sample.id] = s.rtcons_pass;
    for (auto& s : samples)
      if (auto it = verdicts.find(s.sample.id); it != verdicts.end()) s.rtcons_pass = it->second;
    current = std::move(kept);
  }
  rep.output = current.size();
  if (report) *report = rep;
  return current;
}

json synthetic_to_json(const SyntheticSample& s, std::string_view document_text) {
  json j = corpus::sample_to_json(s.sample, document_text);
  j["generator_logprob_sum"] = s.generator_logprob_sum;
  j["lm_filter_rank"] = s.lm_filter_rank ? json(*s.lm_filter_rank) : json(nullptr);
  j["rtcons_pass"] = s.rtcons_pass ? json(*s.rtcons_pass) : json(nullptr);
  return j;
}

SyntheticSample synthetic_from_json(const json& j, const corpus::DocumentIndex& docs) {
  SyntheticSample s;
  const auto id = j.at("document_id").get<std::string>();
  auto it = docs.find(id);
  if (it == docs.end()) throw DataError("synthetic sample refers to unknown document '" + id + "'");
  s.sample = corpus::sample_from_json(j, it->second->text);
  s.generator_logprob_sum = j.at("generator_logprob_sum").get<double>();
  if (j.contains("lm_filter_rank") && !j["lm_filter_rank"].is_null()) s.lm_filter_rank = j["lm_filter_rank"].get<int>();
  if (j.contains("rtcons_pass") && !j["rtcons_pass"].is_null()) s.rtcons_pass = j["rtcons_pass"].get<bool>();
  return s;
}

void write_synthetic(const std::filesystem::path& path, std::span<const SyntheticSample> samples,
                     const corpus::DocumentIndex& docs) {
  std::vector<json> rows;
  rows.reserve(samples.size());
  for (const auto& s : samples) {
    auto it = docs.find(s.sample.document_id);
    if (it == docs.end()) throw DataError("synthetic sample refers to unknown document '" + s.sample.document_id + "'");
    rows.push_back(synthetic_to_json(s, it->second->text));
  }
  write_jsonl(path, rows);
}

std::vector<SyntheticSample> read_synthetic(const std::filesystem::path& path, const corpus::DocumentIndex& docs) {
  std::vector<SyntheticSample> out;
  for_each_line(path, [&](std::size_t line, const std::string& text) {
    try {
      out.push_back(synthetic_from_json(json::parse(text), docs));
    } catch (const json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(line) + ": " + e.what());
    }
  });
  return out;
}

std::vector<corpus::QASample> plain_samples(std::span<const SyntheticSample> samples) {
  std::vector<corpus::QASample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.sample);
  return out;
}

}  // namespace alqa::synthesis
