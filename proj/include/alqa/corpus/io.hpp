#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "alqa/common/jsonl.hpp"
#include "alqa/corpus/tokenizer.hpp"
#include "alqa/corpus/types.hpp"

namespace alqa::corpus {

enum class DatasetFormat { mrqa_jsonl, squad_json, native_jsonl };

DatasetFormat dataset_format_from_string(std::string_view s);

struct RejectedRecord {
  std::string record;  // record id or "line N"
  std::string reason;
};

struct IngestOptions {
  std::string domain = "target";
  // Required for native_jsonl: the documents JSONL referenced by the samples.
  std::optional<std::filesystem::path> documents_path;
  const Tokenizer* tokenizer = nullptr;  // fills Document::token_count when set
  double max_rejected_fraction = 0.10;
};

struct IngestResult {
  std::vector<Document> documents;
  std::vector<QASample> samples;
  std::vector<RejectedRecord> rejected;
  std::size_t records_seen = 0;
  std::size_t skipped_unanswerable = 0;
  std::size_t duplicate_documents = 0;
};

// Throws DataError when the file cannot be parsed or more than
// max_rejected_fraction of the records are rejected.
IngestResult ingest_dataset(const std::filesystem::path& path, DatasetFormat format,
                            const IngestOptions& options = {});

// Native JSONL rows. answer_start/answer_end are code point offsets on disk.
json sample_to_json(const QASample& sample, std::string_view document_text);
QASample sample_from_json(const json& row, std::string_view document_text);
json document_to_json(const Document& doc);
Document document_from_json(const json& row);

void write_documents(const std::filesystem::path& path, const std::vector<Document>& docs);
std::vector<Document> read_documents(const std::filesystem::path& path, const Tokenizer* tokenizer = nullptr);

using DocumentIndex = std::unordered_map<std::string, const Document*>;
DocumentIndex index_documents(const std::vector<Document>& docs);

void write_samples(const std::filesystem::path& path, const std::vector<QASample>& samples,
                   const DocumentIndex& documents);
// Rows that fail the span invariant raise DataError.
std::vector<QASample> read_samples(const std::filesystem::path& path, const DocumentIndex& documents);

struct CorpusManifest {
  std::string name;
  std::string domain;
  std::filesystem::path documents_path;
  std::filesystem::path samples_path;
  std::string tokenizer_id;
  std::size_t documents = 0;
  std::size_t samples = 0;
  std::size_t rejected = 0;
};

void write_manifest(const std::filesystem::path& path, const CorpusManifest& manifest);
// Relative documents/samples paths are resolved against the manifest's directory.
CorpusManifest read_manifest(const std::filesystem::path& path);

// Move-only: `index` points into `documents`.
struct Corpus {
  Corpus() = default;
  Corpus(Corpus&&) = default;
  Corpus& operator=(Corpus&&) = default;
  Corpus(const Corpus&) = delete;
  Corpus& operator=(const Corpus&) = delete;

  CorpusManifest manifest;
  std::vector<Document> documents;
  std::vector<QASample> samples;
  DocumentIndex index;
};

Corpus load_corpus(const std::filesystem::path& manifest_path, const Tokenizer* tokenizer = nullptr);

}  // namespace alqa::corpus
