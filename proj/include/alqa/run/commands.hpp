#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "alqa/run/config.hpp"

namespace alqa::run {

// Exclusive hold on a run directory for the lifetime of the object. A lock left by a
// process that no longer exists is taken over.
class RunLock {
 public:
  explicit RunLock(const std::filesystem::path& dir);
  ~RunLock();
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  std::filesystem::path path_;
};

// Content hash of a file, or of every regular file below a directory (relative names included).
std::uint64_t path_hash(const std::filesystem::path& p);

struct Invocation {
  std::vector<std::string> argv;
  bool force = false;  // rerun even when the step manifest says the outputs are current
};

// ---- data preparation (no run config) ----

struct MakeToyOptions {
  std::filesystem::path out;
  std::size_t source_docs = 300;
  std::size_t target_docs = 500;
  std::uint64_t seed = 1;
  double dev_fraction = 0.1;
  double eval_fraction = 0.2;
};
// Source and target toy corpora (target split into pool/dev/eval manifests), a fitted
// tokenizer and a ready run.json.
json make_toy(const MakeToyOptions& o);

struct IngestCommand {
  std::filesystem::path input;
  std::string format = "mrqa_jsonl";
  std::filesystem::path out;
  std::string name;
  std::string domain = "target";
  std::optional<std::filesystem::path> documents;
  std::optional<std::filesystem::path> tokenizer;
  double max_rejected_fraction = 0.10;
};
json ingest(const IngestCommand& o);

// ---- training and data generation ----

struct TrainGenCommand {
  std::string stage = "source";  // source: fresh model on data.source; target: base fine-tuned on target_pool
};
json train_gen(const RunConfig& cfg, const TrainGenCommand& o, const Invocation& inv);

struct TrainReaderCommand {
  std::string on = "source";  // source | target | synthetic
  std::optional<std::filesystem::path> synthetic;  // default <out>/synthetic/filtered.jsonl
};
json train_reader(const RunConfig& cfg, const TrainReaderCommand& o, const Invocation& inv);

struct SynthesizeCommand {
  std::optional<std::filesystem::path> generator;  // default: configured base generator
  std::optional<std::filesystem::path> out;        // default <out>/synthetic/raw.jsonl
};
json synthesize(const RunConfig& cfg, const SynthesizeCommand& o, const Invocation& inv);

struct FilterCommand {
  std::optional<std::filesystem::path> input;  // default <out>/synthetic/raw.jsonl
  std::optional<std::filesystem::path> out;    // default <out>/synthetic/filtered.jsonl
  std::optional<std::string> mode;             // overrides synthesis.filter_mode
  std::optional<std::filesystem::path> reader;  // RTcons reader; default: configured base reader
};
json filter(const RunConfig& cfg, const FilterCommand& o, const Invocation& inv);

struct ScoreCommand {
  std::string strategy;
  std::optional<std::size_t> select;  // default recipe.batch
  int iteration = 0;
};
// Scores the target pool with the base models and ranks it.
json score(const RunConfig& cfg, const ScoreCommand& o, const Invocation& inv);

// ---- experiments ----

struct AlRunCommand {
  std::optional<std::string> placement;
  std::optional<std::string> strategy;
  std::optional<std::string> name;  // experiment directory; default <placement>-<strategy>
  bool resume = false;
};
json al_run(const RunConfig& cfg, const AlRunCommand& o, const Invocation& inv);

struct BaselineCommand {
  std::string placement = "target_only_baseline";
  std::optional<std::string> name;
};
json baseline(const RunConfig& cfg, const BaselineCommand& o, const Invocation& inv);

// ---- evaluation and reports ----

struct EvaluateCommand {
  // Either predictions + gold ...
  std::optional<std::filesystem::path> predictions;  // JSONL {id, prediction} or JSON {id: prediction}
  std::optional<std::filesystem::path> gold;         // corpus manifest
  // ... or a reader checkpoint evaluated on a configured split.
  std::optional<std::filesystem::path> checkpoint;
  std::string split = "eval";  // eval | dev
  std::optional<std::filesystem::path> out;
};
json evaluate(const std::optional<RunConfig>& cfg, const EvaluateCommand& o);

struct ReportScoresCommand {
  std::vector<std::filesystem::path> dumps;  // files or directories of *.jsonl
  std::filesystem::path out;
};
json report_scores_cmd(const ReportScoresCommand& o);

struct ReportSamplesCommand {
  // label=path; path is an experiment directory (record.json) or a native samples JSONL
  std::vector<std::string> selections;
  std::filesystem::path out;
};
json report_samples_cmd(const RunConfig& cfg, const ReportSamplesCommand& o);

struct ServeCommand {
  std::optional<std::string> host;
  std::optional<int> port;
};
// Serves the run's annotation store until interrupted.
void serve(const RunConfig& cfg, const ServeCommand& o);

}  // namespace alqa::run
