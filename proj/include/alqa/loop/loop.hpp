#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "alqa/acquisition/acquisition.hpp"
#include "alqa/common/error.hpp"
#include "alqa/corpus/io.hpp"
#include "alqa/synthesis/synthesis.hpp"

namespace alqa::loop {

using acquisition::Strategy;

// ---- pool bookkeeping ----

struct PoolState {
  struct Entry {
    int iteration = 0;
    std::vector<std::string> selected;
    Strategy strategy = Strategy::random;
  };
  std::set<std::string> labeled;
  std::set<std::string> pool;
  int iteration = 0;
  std::vector<Entry> history;

  static PoolState initial(std::span<const std::string> candidate_ids);
  // Moves `selected` from the pool to the labeled set; every id must be in the pool.
  void apply_selection(int iter, std::span<const std::string> selected, Strategy strategy);
  void check_invariants() const;  // PreconditionError when violated

  json to_json() const;
  static PoolState from_json(const json& j);
};

// ---- recipes ----

enum class Placement {
  al_on_generator,
  al_on_reader_after_source,
  al_on_reader_after_synthetic,
  random_baseline,
  target_only_baseline,
  source_plus_target_baseline,
};

std::string_view to_string(Placement p);
Placement placement_from_string(std::string_view s);
bool is_baseline(Placement p);     // target_only / source_plus_target
bool generator_side(Placement p);  // al_on_generator / random_baseline

struct RecipeConfig {
  Placement placement = Placement::al_on_generator;
  std::size_t iterations = 4;
  std::size_t batch = 50;
  Strategy strategy = Strategy::dsp;
  synthesis::FilterMode filter_mode = synthesis::FilterMode::lm;
  std::uint64_t seed = 0;

  // random_baseline always selects at random
  Strategy effective_strategy() const;
  void validate() const;
};

void to_json(json& j, const RecipeConfig& v);
void from_json(const json& j, RecipeConfig& v);

struct ExperimentConfig {
  RecipeConfig recipe;
  generator::GenTrainConfig generator_train;
  generator::GenInputLayout layout;
  generator::DecodeConfig decode;
  reader::ReaderTrainConfig reader_train;
  synthesis::SynthesisConfig synthesis;
  acquisition::DropoutEnsembleConfig ensemble;
  std::size_t workers = 1;

  void validate() const;
};

void to_json(json& j, const ExperimentConfig& v);
void from_json(const json& j, ExperimentConfig& v);

// ---- annotation ----

struct AnnotationRequest {
  std::string candidate_id;
  std::string document_id;
  std::string_view context;
  bool is_sample = false;
  std::string question;  // sample candidates only
};

class AnnotatorTimeout : public Error {
 public:
  using Error::Error;
};

class Annotator {
 public:
  virtual ~Annotator() = default;
  // Labels for exactly the requested candidates, tagged in `batch_id` (stable across resumes).
  virtual std::vector<corpus::QASample> annotate(const std::string& batch_id,
                                                 std::span<const AnnotationRequest> requests) = 0;
};

// Simulated expert: returns the held-back gold pairs. A context candidate yields every gold
// pair of that document; a sample candidate yields that sample.
class OracleAnnotator : public Annotator {
 public:
  explicit OracleAnnotator(std::span<const corpus::QASample> gold);
  std::vector<corpus::QASample> annotate(const std::string& batch_id,
                                         std::span<const AnnotationRequest> requests) override;

 private:
  std::span<const corpus::QASample> gold_;
};

// ---- experiments ----

struct BackendFactories {
  std::function<generator::GenerationBackendPtr()> base_generator;  // source-fitted
  std::function<reader::ReaderBackendPtr()> base_reader;            // source- or synthetic-fitted
  std::function<reader::ReaderBackendPtr()> fresh_reader;           // untrained
};

struct Tokenizers {
  const corpus::Tokenizer* generator = nullptr;
  const corpus::Tokenizer* reader = nullptr;
};

struct ExperimentData {
  std::span<const corpus::QASample> pool;  // labeled target samples, labels hidden behind the annotator
  std::span<const corpus::QASample> dev;   // fixed slice for model selection in every iteration
  std::span<const corpus::QASample> eval;  // reported EM/F1
  std::span<const corpus::Document> unlabeled_documents;  // synthesis input
  const corpus::DocumentIndex* docs = nullptr;            // every document referenced above
};

struct IterationRecord {
  int iteration = 0;
  std::vector<std::string> selected;
  std::size_t annotations = 0;
  std::uint64_t base_hash = 0;
  std::uint64_t init_hash = 0;  // weights when fine-tuning started
  std::uint64_t trained_hash = 0;
  json training;                // train log summary
  std::optional<double> eval_em, eval_f1;
  std::size_t flagged = 0;      // candidates with decode_failed
};

struct ExperimentRecord {
  enum class Status { completed, suspended, stopped_early };
  Status status = Status::completed;
  ExperimentConfig config;
  PoolState pool;
  std::vector<IterationRecord> iterations;
  std::vector<corpus::QASample> annotated;
  json phases = json::array();  // {name, ...} per training phase
  std::optional<double> final_em, final_f1;

  json to_json(const corpus::DocumentIndex& docs) const;
  static ExperimentRecord from_json(const json& j, const corpus::DocumentIndex& docs);
};

std::string_view to_string(ExperimentRecord::Status s);

json iteration_to_json(const IterationRecord& r);
IterationRecord iteration_from_json(const json& j);

// Algorithm: score -> select -> annotate -> re-initialize from base -> fine-tune on all labels,
// r times; the generator-side recipe then synthesizes, filters and trains the final reader.
// Writes the record directory; with `resume`, continues a suspended run in `dir`.
ExperimentRecord run_al(const BackendFactories& factories, const Tokenizers& tokenizers, const ExperimentData& data,
                        const ExperimentConfig& cfg, Annotator& annotator, const std::filesystem::path& dir,
                        bool resume = false);

ExperimentRecord run_baseline(const BackendFactories& factories, const Tokenizers& tokenizers,
                              const ExperimentData& data, const ExperimentConfig& cfg,
                              const std::filesystem::path& dir);

// Uniform sample without replacement, seeded; result keeps input order.
std::vector<corpus::QASample> subsample_pool(std::span<const corpus::QASample> pool, std::size_t k,
                                             std::uint64_t seed);
std::vector<std::size_t> subsample_indices(std::size_t n, std::size_t k, std::uint64_t seed);

// Candidate ids for the recipe: document ids (context strategies) or sample ids.
std::vector<std::string> candidate_ids(std::span<const corpus::QASample> pool, bool contexts);

}  // namespace alqa::loop
