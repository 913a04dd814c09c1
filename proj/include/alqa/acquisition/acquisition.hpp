#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "alqa/common/jsonl.hpp"
#include "alqa/corpus/tokenizer.hpp"
#include "alqa/generator/backend.hpp"
#include "alqa/generator/config.hpp"
#include "alqa/reader/backend.hpp"
#include "alqa/reader/reader.hpp"

namespace alqa::acquisition {

enum class Strategy { sp, dsp, ls, rt, dsp_rt, bald, random };

std::string_view to_string(Strategy s);
Strategy strategy_from_string(std::string_view s);  // ConfigError on unknown names

// Generator-side strategies score contexts; bald scores question + context samples.
bool scores_contexts(Strategy s);
bool needs_generator(Strategy s);
bool needs_reader(Strategy s);

// Higher priority is selected first: -raw for sp/dsp/ls/rt/dsp_rt, +raw for bald/random.
double priority_for(Strategy s, double raw);

struct AcquisitionScore {
  std::string candidate_id;
  Strategy strategy = Strategy::sp;
  double raw_score = 0.0;
  double priority = 0.0;
  int iteration = 0;
  std::size_t passes = 0;
  std::vector<std::string> flags;
};

json score_to_json(const AcquisitionScore& s);
AcquisitionScore score_from_json(const json& j);

struct DropoutEnsembleConfig {
  std::size_t passes = 10;
  std::uint64_t base_seed = 0;
  bool dropout = true;  // off only for degenerate-ensemble checks

  void validate() const;
};

void to_json(json& j, const DropoutEnsembleConfig& v);
void from_json(const json& j, DropoutEnsembleConfig& v);

// Mean log-prob assigned to a context whose deterministic decode fails validity.
// log(1e-9) sits below any realistic per-token mean, so failures rank as least confident.
inline const double kDecodeFailureLogprob = -20.723265836946411;

// ---- formulas ----

double mean_of(std::span<const double> xs);

struct MeteorParams {
  double alpha = 0.9;
  double gamma = 0.5;
  double beta = 3.0;
};

// Exact-match unigram alignment, harmonic mean weighted toward recall, fragmentation penalty.
double meteor(std::span<const std::string> hypothesis, std::span<const std::string> reference,
              const MeteorParams& params = {});

using SimilarityFn = std::function<double(std::span<const std::string>, std::span<const std::string>)>;

// 1/(N(N-1)) * sum over ordered pairs i != j of sim(a_i, a_j). Empty answers score 0 against anything.
double lexical_similarity(std::span<const std::vector<std::string>> answers, const SimilarityFn& sim = {});

double dsp_rt_combine(double dsp, double rt);  // exp(8 * dsp) + rt

double entropy(std::span<const double> probs);
// H(mean of passes) - mean of H(pass); probabilities, all passes the same length.
double mutual_information(std::span<const std::vector<double>> passes);

// ---- scorers ----

struct ScoringModels {
  generator::GenerationBackend* generator = nullptr;
  const corpus::Tokenizer* generator_tokenizer = nullptr;
  generator::GenInputLayout layout;
  reader::ReaderBackend* reader = nullptr;
  const corpus::Tokenizer* reader_tokenizer = nullptr;
  reader::ReaderTrainConfig reader_cfg;
  std::size_t beam_size = 10;
  std::size_t max_answer_tokens = 300;
};

struct Candidate {
  std::string id;
  std::string_view context;
  std::string question;  // bald only
};

struct ScoreResult {
  double raw = 0.0;
  std::size_t passes = 0;
  std::vector<std::string> flags;
};

// The backends must be in deterministic mode on entry and are returned to it.
ScoreResult score_sp(const ScoringModels& m, const Candidate& c);
ScoreResult score_dsp(const ScoringModels& m, const Candidate& c, const DropoutEnsembleConfig& cfg);
ScoreResult score_ls(const ScoringModels& m, const Candidate& c, const DropoutEnsembleConfig& cfg,
                     const SimilarityFn& sim = {});
ScoreResult score_rt(const ScoringModels& m, const Candidate& c);
ScoreResult score_dsp_rt(const ScoringModels& m, const Candidate& c, const DropoutEnsembleConfig& cfg);
ScoreResult score_bald(const ScoringModels& m, const Candidate& c, const DropoutEnsembleConfig& cfg);
double random_score(std::uint64_t base_seed, std::string_view candidate_id, int iteration);

AcquisitionScore score_candidate(Strategy s, const ScoringModels& m, const Candidate& c,
                                 const DropoutEnsembleConfig& cfg, int iteration);

// Scores every candidate; workers > 1 score on private backend clones. Output follows input order.
std::vector<AcquisitionScore> score_pool(Strategy s, const ScoringModels& m, std::span<const Candidate> candidates,
                                         const DropoutEnsembleConfig& cfg, int iteration, std::size_t workers = 1);

// Top n by priority, ties by candidate id; n beyond the pool selects everything (with a warning).
std::vector<std::string> rank_and_select(std::span<const AcquisitionScore> scores, std::size_t n);

void write_score_dump(const std::filesystem::path& path, std::span<const AcquisitionScore> scores);
void append_score_dump(const std::filesystem::path& path, std::span<const AcquisitionScore> scores);
std::vector<AcquisitionScore> read_score_dump(const std::filesystem::path& path);

}  // namespace alqa::acquisition
