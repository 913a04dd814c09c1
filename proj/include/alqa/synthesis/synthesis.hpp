#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "alqa/common/error.hpp"
#include "alqa/corpus/io.hpp"
#include "alqa/corpus/types.hpp"
#include "alqa/generator/qa2s.hpp"
#include "alqa/reader/reader.hpp"

namespace alqa::synthesis {

struct SyntheticSample {
  corpus::QASample sample;
  double generator_logprob_sum = 0.0;  // question and answer steps combined
  std::optional<int> lm_filter_rank;   // 1-based
  std::optional<bool> rtcons_pass;
};

enum class FilterMode { none, lm, rtcons, both };
enum class LmScope { per_context, global };
enum class RtconsMatch { exact, f1_threshold };

FilterMode filter_mode_from_string(std::string_view s);
std::string_view to_string(FilterMode m);

struct SynthesisConfig {
  std::size_t max_documents = 100000;
  std::size_t min_context_tokens = 100;
  std::size_t questions_per_context = 10;
  std::size_t lm_filter_top_n = 5;
  FilterMode filter_mode = FilterMode::lm;
  LmScope lm_scope = LmScope::per_context;
  RtconsMatch rtcons_match = RtconsMatch::exact;
  double rtcons_f1_threshold = 0.8;
  std::uint64_t seed = 0;
  std::size_t workers = 1;  // each worker decodes with its own clone of the backend

  void validate() const;
};

void to_json(json& j, const SynthesisConfig& v);
void from_json(const json& j, SynthesisConfig& v);

struct GenerationReport {
  std::size_t documents_seen = 0;
  std::size_t documents_skipped = 0;
  std::size_t documents_processed = 0;
  std::size_t pairs_attempted = 0;
  std::size_t pairs_valid = 0;
  std::map<std::string, std::size_t> rejection_reasons;

  json to_json() const;
};

// Raised when no document is eligible; carries the report (all documents skipped).
class NoEligibleDocumentsError : public PreconditionError {
 public:
  explicit NoEligibleDocumentsError(GenerationReport report)
      : PreconditionError("synthesize_corpus: no eligible documents"), report_(std::move(report)) {}
  const GenerationReport& report() const { return report_; }

 private:
  GenerationReport report_;
};

struct SynthesisResult {
  std::vector<SyntheticSample> samples;
  GenerationReport report;
};

// Sampling seed of question i for the context at position context_index.
std::uint64_t question_seed(std::uint64_t base, std::size_t context_index, std::size_t questions_per_context,
                            std::size_t i);

// Up to questions_per_context pairs for each of the first max_documents documents having
// at least min_context_tokens tokens; longer contexts keep their first max_source_tokens.
SynthesisResult synthesize_corpus(const generator::GenerationBackend& backend, std::span<const corpus::Document> documents,
                                  const corpus::Tokenizer& tokenizer, const SynthesisConfig& cfg,
                                  const generator::GenInputLayout& layout, const generator::DecodeConfig& decode);

// Records lm_filter_rank on every sample and returns the top_n per context (or overall).
// Order: generator_logprob_sum descending, then sample id.
std::vector<SyntheticSample> lm_score_filter(std::vector<SyntheticSample>& samples, std::size_t top_n,
                                             LmScope scope = LmScope::per_context);

struct RtconsReport {
  std::size_t checked = 0;
  std::size_t kept = 0;
  std::size_t prediction_failures = 0;
};

struct RtconsOptions {
  RtconsMatch match = RtconsMatch::exact;
  double f1_threshold = 0.8;
};

// Records rtcons_pass on every sample the reader could score; keeps the passing ones.
std::vector<SyntheticSample> rtcons_filter(std::vector<SyntheticSample>& samples, const reader::ReaderBackend& reader,
                                           const corpus::Tokenizer& reader_tokenizer, const corpus::DocumentIndex& docs,
                                           const reader::ReaderTrainConfig& reader_cfg, const RtconsOptions& options = {},
                                           RtconsReport* report = nullptr);

struct FilterContext {
  const reader::ReaderBackend* reader = nullptr;
  const corpus::Tokenizer* reader_tokenizer = nullptr;
  const corpus::DocumentIndex* docs = nullptr;
  reader::ReaderTrainConfig reader_cfg;
};

struct FilterReport {
  std::size_t input = 0;
  std::size_t after_lm = 0;
  std::size_t output = 0;
  RtconsReport rtcons;

  json to_json() const;
};

// Applies the configured mode; "both" runs the LM filter first, then RTcons on its survivors.
std::vector<SyntheticSample> apply_filters(std::vector<SyntheticSample>& samples, const SynthesisConfig& cfg,
                                           const FilterContext& ctx, FilterReport* report = nullptr);

json synthetic_to_json(const SyntheticSample& s, std::string_view document_text);
SyntheticSample synthetic_from_json(const json& j, const corpus::DocumentIndex& docs);
void write_synthetic(const std::filesystem::path& path, std::span<const SyntheticSample> samples,
                     const corpus::DocumentIndex& docs);
std::vector<SyntheticSample> read_synthetic(const std::filesystem::path& path, const corpus::DocumentIndex& docs);

std::vector<corpus::QASample> plain_samples(std::span<const SyntheticSample> samples);

}  // namespace alqa::synthesis
