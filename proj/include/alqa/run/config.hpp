#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "alqa/loop/loop.hpp"

namespace alqa::run {

struct BackendSpec {
  std::string id;
  json options = json::object();  // backend-specific, passed through unchecked
};

struct AnnotationConfig {
  std::string mode = "oracle";  // oracle | live
  std::string host = "127.0.0.1";
  int port = 8080;
  std::int64_t lease_minutes = 30;
  std::int64_t poll_ms = 500;
  std::int64_t timeout_s = 24 * 3600;
  std::optional<std::filesystem::path> store_dir;  // default: <output_dir>/annotation
};

// Corpus manifests. Missing entries are only an error for commands that need them.
struct DataPaths {
  std::optional<std::filesystem::path> source;       // labeled source-domain corpus
  std::optional<std::filesystem::path> target_pool;  // target corpus whose labels the annotator holds
  std::optional<std::filesystem::path> target_dev;
  std::optional<std::filesystem::path> target_eval;
  std::optional<std::filesystem::path> unlabeled;  // synthesis documents; default: target_pool's
};

struct RunConfig {
  std::filesystem::path output_dir = "run";
  std::uint64_t seed = 0;
  DataPaths data;
  std::optional<std::filesystem::path> generator_tokenizer;
  std::optional<std::filesystem::path> reader_tokenizer;  // default: the generator tokenizer
  BackendSpec generator{"toy-copy-gen"};
  BackendSpec reader{"toy-span-reader"};
  // Base checkpoints; default to the train-gen / train-reader outputs under output_dir.
  std::optional<std::filesystem::path> generator_checkpoint;
  std::optional<std::filesystem::path> reader_checkpoint;
  std::optional<std::filesystem::path> synthetic_reader_checkpoint;
  loop::ExperimentConfig experiment;
  AnnotationConfig annotation;
};

using Environment = std::map<std::string, std::string>;

// ALQA_* variables of the process environment.
Environment process_environment();

// Overrides applied after the file is read:
//   ALQA_OUTPUT_DIR  output directory (relative to the working directory)
//   ALQA_DATA_DIR    base for relative data, tokenizer and checkpoint paths
//   ALQA_SEED        run seed
//   ALQA_WORKERS     worker threads
// Relative paths in the file resolve against the file's directory. Module seeds left
// out of the file derive from the run seed.
RunConfig parse_run_config(const json& j, const std::filesystem::path& base_dir, const Environment& env = {});
RunConfig load_run_config(const std::filesystem::path& path, const Environment& env = {});

json run_config_to_json(const RunConfig& cfg);

// Dotted paths of keys in `j` that the schema does not know. A null or empty-object
// default accepts any value below it.
std::vector<std::string> unknown_keys(const json& j, const json& schema, const std::string& prefix = "");

// "path: problem" for values whose JSON type differs from the schema default's.
std::vector<std::string> type_mismatches(const json& j, const json& schema, const std::string& prefix = "");

// Module seed derived from the run seed.
std::uint64_t module_seed(std::uint64_t run_seed, const std::string& module);

}  // namespace alqa::run
