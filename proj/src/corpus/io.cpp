#include "alqa/corpus/io.hpp"

#include <algorithm>
#include <cctype>
#include <unordered_set>

#include <spdlog/spdlog.h>

#include "alqa/common/error.hpp"
#include "alqa/common/hash.hpp"
#include "alqa/common/utf8.hpp"

namespace alqa::corpus {

namespace {

std::string lower_ascii(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string document_id_for(std::string_view text) { return "doc-" + to_hex(fnv1a(text)); }

// Accumulates documents (deduplicated by text hash) and samples while parsing.
class IngestBuilder {
 public:
  explicit IngestBuilder(const IngestOptions& options) : options_(options) {}

  // Returns the id of the (possibly pre-existing) document holding `text`.
  std::string add_document(std::string text, std::string id = {}) {
    const std::uint64_t h = fnv1a(text);
    if (auto it = by_hash_.find(h); it != by_hash_.end()) {
      ++result_.duplicate_documents;
      return result_.documents[it->second].id;
    }
    Document doc;
    doc.id = id.empty() ? document_id_for(text) : std::move(id);
    doc.text = std::move(text);
    doc.domain = options_.domain;
    if (options_.tokenizer) doc.token_count = options_.tokenizer->count(doc.text);
    by_hash_[h] = result_.documents.size();
    by_id_[doc.id] = result_.documents.size();
    result_.documents.push_back(std::move(doc));
    return result_.documents.back().id;
  }

  const Document& document(const std::string& id) const {
    auto it = by_id_.find(id);
    if (it == by_id_.end()) throw DataError("unknown document " + id);
    return result_.documents[it->second];
  }

  void reject(std::string record, std::string reason) {
    ++result_.records_seen;
    result_.rejected.push_back({std::move(record), std::move(reason)});
  }

  void skip_unanswerable() { ++result_.skipped_unanswerable; }

  void accept(QASample sample) {
    ++result_.records_seen;
    if (!sample_ids_.insert(sample.id).second) {
      result_.rejected.push_back({sample.id, "duplicate id"});
      return;
    }
    result_.samples.push_back(std::move(sample));
  }

  IngestResult finish(const std::filesystem::path& path) {
    const double seen = static_cast<double>(result_.records_seen);
    const double bad = static_cast<double>(result_.rejected.size());
    spdlog::info("ingest {}: {} documents, {} samples, {} rejected, {} unanswerable skipped", path.string(),
                 result_.documents.size(), result_.samples.size(), result_.rejected.size(),
                 result_.skipped_unanswerable);
    if (seen > 0 && bad / seen > options_.max_rejected_fraction) {
      throw DataError(path.string() + ": " + std::to_string(result_.rejected.size()) + " of " +
                      std::to_string(result_.records_seen) + " records rejected (first: " +
                      result_.rejected.front().reason + ")");
    }
    return std::move(result_);
  }

 private:
  const IngestOptions& options_;
  IngestResult result_;
  std::unordered_map<std::uint64_t, std::size_t> by_hash_;
  std::unordered_map<std::string, std::size_t> by_id_;
  std::unordered_set<std::string> sample_ids_;
};

// Converts code point offsets to a byte span and checks it against `answer`.
// On a case-only difference the context slice wins.
std::optional<QASample> make_sample(const Document& doc, std::string id, std::string question, std::string answer,
                                    std::size_t cp_start, std::size_t cp_end, const std::string& domain,
                                    std::string* reason) {
  const std::size_t b_start = utf8::byte_offset(doc.text, cp_start);
  const std::size_t b_end = utf8::byte_offset(doc.text, cp_end);
  if (b_start == std::string::npos || b_end == std::string::npos || b_start >= b_end) {
    *reason = "span out of bounds";
    return std::nullopt;
  }
  const std::string slice = doc.text.substr(b_start, b_end - b_start);
  if (slice != answer) {
    if (lower_ascii(slice) != lower_ascii(answer)) {
      *reason = "span mismatch";
      return std::nullopt;
    }
    answer = slice;
  }
  if (question.empty()) {
    *reason = "empty question";
    return std::nullopt;
  }
  QASample s;
  s.id = std::move(id);
  s.document_id = doc.id;
  s.question = std::move(question);
  s.answer_text = std::move(answer);
  s.answer_span = {b_start, b_end};
  s.provenance = Provenance::human;
  s.domain = domain;
  return s;
}

void add_extra(QASample& s, const std::string& text) {
  if (text.empty() || text == s.answer_text) return;
  if (std::find(s.extra_answers.begin(), s.extra_answers.end(), text) != s.extra_answers.end()) return;
  s.extra_answers.push_back(text);
}

IngestResult ingest_squad(const std::filesystem::path& path, const IngestOptions& options) {
  const json root = read_json_file(path);
  if (!root.contains("data") || !root["data"].is_array()) throw DataError(path.string() + ": missing 'data' array");
  IngestBuilder b(options);
  std::size_t article_index = 0;
  for (const auto& article : root["data"]) {
    std::size_t paragraph_index = 0;
    for (const auto& para : article.value("paragraphs", json::array())) {
      const std::string where = "article " + std::to_string(article_index) + " paragraph " +
                                std::to_string(paragraph_index++);
      if (!para.contains("context") || !para["context"].is_string()) {
        b.reject(where, "missing context");
        continue;
      }
      const std::string doc_id = b.add_document(para["context"].get<std::string>());
      const Document& doc = b.document(doc_id);
      for (const auto& qa : para.value("qas", json::array())) {
        const std::string id = qa.contains("id") ? qa["id"].get<std::string>() : where;
        if (qa.value("is_impossible", false) || !qa.contains("answers") || qa["answers"].empty()) {
          b.skip_unanswerable();
          continue;
        }
        try {
          const auto& answers = qa["answers"];
          const auto& first = answers[0];
          const std::string text = first.at("text").get<std::string>();
          const std::size_t start = first.at("answer_start").get<std::size_t>();
          std::string reason;
          auto s = make_sample(doc, id, qa.at("question").get<std::string>(), text, start,
                               start + utf8::codepoint_count(text), options.domain, &reason);
          if (!s) {
            b.reject(id, reason);
            continue;
          }
          for (std::size_t i = 1; i < answers.size(); ++i) add_extra(*s, answers[i].value("text", ""));
          b.accept(std::move(*s));
        } catch (const json::exception& e) {
          b.reject(id, std::string("malformed record: ") + e.what());
        }
      }
    }
    ++article_index;
  }
  return b.finish(path);
}

IngestResult ingest_mrqa(const std::filesystem::path& path, const IngestOptions& options) {
  IngestBuilder b(options);
  bool first = true;
  for_each_line(path, [&](std::size_t number, const std::string& line) {
    const std::string where = "line " + std::to_string(number);
    json row;
    try {
      row = json::parse(line);
    } catch (const json::parse_error&) {
      b.reject(where, "malformed json");
      first = false;
      return;
    }
    if (first) {
      first = false;
      if (row.contains("header")) return;
    }
    if (!row.contains("context") || !row["context"].is_string() || !row.contains("qas")) {
      b.reject(where, "missing context or qas");
      return;
    }
    const std::string doc_id = b.add_document(row["context"].get<std::string>());
    const Document& doc = b.document(doc_id);
    for (const auto& qa : row["qas"]) {
      const std::string id = qa.contains("qid") ? qa["qid"].get<std::string>() : where;
      try {
        const auto& detected = qa.value("detected_answers", json::array());
        if (detected.empty()) {
          b.skip_unanswerable();
          continue;
        }
        const auto& d0 = detected[0];
        const auto& spans = d0.at("char_spans");
        if (spans.empty()) {
          b.reject(id, "missing char_spans");
          continue;
        }
        // MRQA character spans are inclusive on both ends.
        const std::size_t s0 = spans[0][0].get<std::size_t>();
        const std::size_t e0 = spans[0][1].get<std::size_t>();
        std::string reason;
        auto s = make_sample(doc, id, qa.at("question").get<std::string>(), d0.at("text").get<std::string>(), s0,
                             e0 + 1, options.domain, &reason);
        if (!s) {
          b.reject(id, reason);
          continue;
        }
        for (std::size_t i = 1; i < detected.size(); ++i) add_extra(*s, detected[i].value("text", ""));
        for (const auto& a : qa.value("answers", json::array())) {
          if (a.is_string()) add_extra(*s, a.get<std::string>());
        }
        b.accept(std::move(*s));
      } catch (const json::exception& e) {
        b.reject(id, std::string("malformed record: ") + e.what());
      }
    }
  });
  return b.finish(path);
}

IngestResult ingest_native(const std::filesystem::path& path, const IngestOptions& options) {
  if (!options.documents_path) throw DataError("native_jsonl ingestion requires a documents file");
  IngestBuilder b(options);
  std::unordered_map<std::string, std::string> remap;  // file document id -> deduplicated id
  for (auto& doc : read_documents(*options.documents_path, nullptr)) {
    const std::string original = doc.id;
    remap[original] = b.add_document(std::move(doc.text), original);
  }
  for_each_line(path, [&](std::size_t number, const std::string& line) {
    const std::string where = "line " + std::to_string(number);
    try {
      const json row = json::parse(line);
      const std::string id = row.at("id").get<std::string>();
      auto it = remap.find(row.at("document_id").get<std::string>());
      if (it == remap.end()) {
        b.reject(id, "unknown document");
        return;
      }
      const Document& doc = b.document(it->second);
      QASample s;
      try {
        s = sample_from_json(row, doc.text);
      } catch (const DataError& e) {
        b.reject(id, e.what());
        return;
      }
      s.document_id = doc.id;
      b.accept(std::move(s));
    } catch (const json::exception& e) {
      b.reject(where, std::string("malformed record: ") + e.what());
    }
  });
  return b.finish(path);
}

}  // namespace

DatasetFormat dataset_format_from_string(std::string_view s) {
  if (s == "mrqa_jsonl") return DatasetFormat::mrqa_jsonl;
  if (s == "squad_json") return DatasetFormat::squad_json;
  if (s == "native_jsonl") return DatasetFormat::native_jsonl;
  throw ConfigError("unknown dataset format '" + std::string(s) + "'");
}

IngestResult ingest_dataset(const std::filesystem::path& path, DatasetFormat format, const IngestOptions& options) {
  if (!std::filesystem::exists(path)) throw DataError("no such file: " + path.string());
  switch (format) {
    case DatasetFormat::squad_json: return ingest_squad(path, options);
    case DatasetFormat::mrqa_jsonl: return ingest_mrqa(path, options);
    case DatasetFormat::native_jsonl: return ingest_native(path, options);
  }
  throw ConfigError("unsupported format");
}

json sample_to_json(const QASample& sample, std::string_view document_text) {
  json j;
  j["id"] = sample.id;
  j["document_id"] = sample.document_id;
  j["question"] = sample.question;
  j["answer_text"] = sample.answer_text;
  j["answer_start"] = utf8::codepoint_offset(document_text, sample.answer_span.start);
  j["answer_end"] = utf8::codepoint_offset(document_text, sample.answer_span.end);
  j["provenance"] = std::string(to_string(sample.provenance));
  j["domain"] = sample.domain;
  if (!sample.extra_answers.empty()) j["extra_answers"] = sample.extra_answers;
  return j;
}

QASample sample_from_json(const json& row, std::string_view document_text) {
  QASample s;
  try {
    s.id = row.at("id").get<std::string>();
    s.document_id = row.at("document_id").get<std::string>();
    s.question = row.at("question").get<std::string>();
    s.answer_text = row.at("answer_text").get<std::string>();
    const std::size_t cp_start = row.at("answer_start").get<std::size_t>();
    const std::size_t cp_end = row.at("answer_end").get<std::size_t>();
    const std::size_t b_start = utf8::byte_offset(document_text, cp_start);
    const std::size_t b_end = utf8::byte_offset(document_text, cp_end);
    if (b_start == std::string::npos || b_end == std::string::npos) throw DataError("span out of bounds");
    s.answer_span = {b_start, b_end};
    s.provenance = provenance_from_string(row.value("provenance", "human"));
    s.domain = row.value("domain", "");
    if (row.contains("extra_answers")) s.extra_answers = row["extra_answers"].get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed sample: ") + e.what());
  }
  if (!span_invariant_holds(document_text, s)) throw DataError("span mismatch");
  return s;
}

json document_to_json(const Document& doc) {
  return json{{"id", doc.id}, {"text", doc.text}, {"domain", doc.domain}};
}

Document document_from_json(const json& row) {
  Document d;
  try {
    d.id = row.at("id").get<std::string>();
    d.text = row.at("text").get<std::string>();
    d.domain = row.value("domain", "");
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed document: ") + e.what());
  }
  return d;
}

void write_documents(const std::filesystem::path& path, const std::vector<Document>& docs) {
  std::vector<json> rows;
  rows.reserve(docs.size());
  for (const auto& d : docs) rows.push_back(document_to_json(d));
  write_jsonl(path, rows);
}

std::vector<Document> read_documents(const std::filesystem::path& path, const Tokenizer* tokenizer) {
  std::vector<Document> docs;
  std::unordered_set<std::string> ids;
  for (const auto& row : read_jsonl(path)) {
    Document d = document_from_json(row);
    if (!ids.insert(d.id).second) throw DataError(path.string() + ": duplicate document id " + d.id);
    if (tokenizer) d.token_count = tokenizer->count(d.text);
    docs.push_back(std::move(d));
  }
  return docs;
}

DocumentIndex index_documents(const std::vector<Document>& docs) {
  DocumentIndex index;
  for (const auto& d : docs) index[d.id] = &d;
  return index;
}

void write_samples(const std::filesystem::path& path, const std::vector<QASample>& samples,
                   const DocumentIndex& documents) {
  std::vector<json> rows;
  rows.reserve(samples.size());
  for (const auto& s : samples) {
    auto it = documents.find(s.document_id);
    if (it == documents.end()) throw DataError("sample " + s.id + " references unknown document " + s.document_id);
    rows.push_back(sample_to_json(s, it->second->text));
  }
  write_jsonl(path, rows);
}

std::vector<QASample> read_samples(const std::filesystem::path& path, const DocumentIndex& documents) {
  std::vector<QASample> samples;
  for (const auto& row : read_jsonl(path)) {
    const std::string doc_id = row.value("document_id", "");
    auto it = documents.find(doc_id);
    if (it == documents.end()) throw DataError(path.string() + ": unknown document " + doc_id);
    try {
      samples.push_back(sample_from_json(row, it->second->text));
    } catch (const DataError& e) {
      throw DataError(path.string() + ": sample " + row.value("id", "?") + ": " + e.what());
    }
  }
  return samples;
}

void write_manifest(const std::filesystem::path& path, const CorpusManifest& m) {
  json j{{"name", m.name},
         {"domain", m.domain},
         {"documents_path", m.documents_path.string()},
         {"samples_path", m.samples_path.string()},
         {"tokenizer_id", m.tokenizer_id},
         {"counts", {{"documents", m.documents}, {"samples", m.samples}, {"rejected", m.rejected}}}};
  write_json_file(path, j);
}

CorpusManifest read_manifest(const std::filesystem::path& path) {
  const json j = read_json_file(path);
  CorpusManifest m;
  try {
    m.name = j.at("name").get<std::string>();
    m.domain = j.value("domain", "");
    m.documents_path = j.at("documents_path").get<std::string>();
    m.samples_path = j.value("samples_path", "");
    m.tokenizer_id = j.value("tokenizer_id", "");
    if (j.contains("counts")) {
      m.documents = j["counts"].value("documents", 0);
      m.samples = j["counts"].value("samples", 0);
      m.rejected = j["counts"].value("rejected", 0);
    }
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": malformed manifest: " + e.what());
  }
  const auto base = path.parent_path();
  if (m.documents_path.is_relative()) m.documents_path = base / m.documents_path;
  if (!m.samples_path.empty() && m.samples_path.is_relative()) m.samples_path = base / m.samples_path;
  return m;
}

Corpus load_corpus(const std::filesystem::path& manifest_path, const Tokenizer* tokenizer) {
  Corpus c;
  c.manifest = read_manifest(manifest_path);
  c.documents = read_documents(c.manifest.documents_path, tokenizer);
  c.index = index_documents(c.documents);
  if (!c.manifest.samples_path.empty() && std::filesystem::exists(c.manifest.samples_path)) {
    c.samples = read_samples(c.manifest.samples_path, c.index);
  }
  return c;
}

}  // namespace alqa::corpus
