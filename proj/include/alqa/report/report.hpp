#pragma once

#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "alqa/acquisition/acquisition.hpp"
#include "alqa/corpus/io.hpp"
#include "alqa/generator/config.hpp"
#include "alqa/reader/reader.hpp"

namespace alqa::report {

// One sorted-score curve. Points are ordered by rank; rank_fraction runs over [0, 1].
struct ScoreCurve {
  std::string source;  // dump label, usually the file stem
  std::string strategy;
  int iteration = 0;
  std::vector<double> rank_fraction;
  std::vector<double> rescaled;
  double raw_min = 0.0;
  double raw_max = 0.0;
  std::size_t flagged = 0;
  bool constant = false;
};

struct ScoreDump {
  std::string source;
  std::vector<acquisition::AcquisitionScore> scores;
};

// Raw scores sorted ascending per iteration and min-max rescaled over the whole dump.
// A constant dump rescales to zeros and logs a warning.
std::vector<ScoreCurve> report_scores(std::span<const ScoreDump> dumps);

// Columns: source, strategy, iteration, rank_fraction, rescaled_score.
void write_score_csv(const std::filesystem::path& path, std::span<const ScoreCurve> curves);
json score_summary(std::span<const ScoreCurve> curves);

// A model's view of the data: the tokenizer that measures lengths and the number of
// training instances a sample turns into for that model.
struct StatsView {
  std::string name;
  const corpus::Tokenizer* tokenizer = nullptr;
  std::function<std::size_t(const corpus::QASample&, const corpus::Document&)> instances;
};

// Reader instances are context chunks; generator instances are training pairs.
StatsView reader_view(std::string name, const corpus::Tokenizer& tokenizer, const reader::ReaderTrainConfig& cfg);
StatsView generator_view(std::string name, const corpus::Tokenizer& tokenizer, const generator::GenInputLayout& layout);

struct Selection {
  std::string strategy;
  std::vector<corpus::QASample> samples;
};

struct StrategyStats {
  std::string strategy;
  std::size_t samples = 0;
  std::size_t unique_contexts = 0;
  std::vector<double> mean_context_length;   // per view
  std::vector<double> mean_question_length;  // per view
  std::vector<std::size_t> instances;        // per view
};

struct SampleStats {
  std::vector<std::string> views;
  std::vector<StrategyStats> rows;
  // overlap[i][j] = |ids_i ∩ ids_j|; the diagonal is the number of distinct selected ids.
  std::vector<std::vector<std::size_t>> overlap;
};

SampleStats report_sample_stats(std::span<const Selection> selections, const corpus::DocumentIndex& docs,
                                std::span<const StatsView> views);

json stats_to_json(const SampleStats& stats);
void write_stats_csv(const std::filesystem::path& stats_path, const std::filesystem::path& overlap_path,
                     const SampleStats& stats);

}  // namespace alqa::report
