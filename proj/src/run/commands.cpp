#include "alqa/run/commands.hpp"

#include <fcntl.h>
#include <signal.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <csignal>
#include <fstream>
#include <map>
#include <set>
#include <thread>

#include <spdlog/spdlog.h>

#include "alqa/annotation/annotation.hpp"
#include "alqa/common/error.hpp"
#include "alqa/common/hash.hpp"
#include "alqa/corpus/toy.hpp"
#include "alqa/generator/qa2s.hpp"
#include "alqa/generator/toy_backend.hpp"
#include "alqa/reader/toy_reader.hpp"
#include "alqa/report/report.hpp"

namespace alqa::run {

namespace fs = std::filesystem;

// ---- locking and hashing ----

RunLock::RunLock(const fs::path& dir) : path_(dir / ".alqa.lock") {
  fs::create_directories(dir);
  for (int attempt = 0; attempt < 2; ++attempt) {
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd >= 0) {
      const auto pid = std::to_string(::getpid()) + "\n";
      [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
      ::close(fd);
      return;
    }
    long holder = 0;
    {
      std::ifstream in(path_);
      in >> holder;
    }
    const bool alive = holder > 0 && (::kill(static_cast<pid_t>(holder), 0) == 0 || errno == EPERM);
    if (alive) throw ConfigError("run directory " + dir.string() + " is locked by process " + std::to_string(holder));
    spdlog::warn("removing stale lock of process {} in {}", holder, dir.string());
    fs::remove(path_);
  }
  throw ConfigError("cannot lock run directory " + dir.string());
}

RunLock::~RunLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

std::uint64_t path_hash(const fs::path& p) {
  if (fs::is_regular_file(p)) return file_hash(p);
  if (!fs::is_directory(p)) throw DataError("cannot hash missing path " + p.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(p))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::string acc;
  for (const auto& f : files) acc += fs::relative(f, p).string() + ":" + to_hex(file_hash(f)) + ";";
  return fnv1a(acc);
}

namespace {

using corpus::QASample;

std::string now_iso() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(); }

// Hash of a corpus manifest together with the files it points to.
std::uint64_t corpus_hash(const fs::path& manifest) {
  const auto m = corpus::read_manifest(manifest);
  std::string acc = to_hex(file_hash(manifest)) + to_hex(file_hash(m.documents_path));
  if (!m.samples_path.empty() && fs::exists(m.samples_path)) acc += to_hex(file_hash(m.samples_path));
  return fnv1a(acc);
}

// ---- step manifests ----

struct Step {
  std::string name;
  json fingerprint = json::object();
  json inputs = json::object();  // label -> {path, hash}
  std::vector<fs::path> outputs;
  json seeds = json::object();

  void input(const std::string& label, const fs::path& p, bool corpus = false) {
    const auto h = corpus ? corpus_hash(p) : path_hash(p);
    inputs[label] = {{"path", p.string()}, {"hash", to_hex(h)}};
  }
  std::string key() const { return to_hex(fnv1a(json{{"f", fingerprint}, {"i", inputs}}.dump())); }
};

fs::path manifest_path(const RunConfig& cfg, const Step& s) { return cfg.output_dir / "manifests" / (s.name + ".json"); }

// Summary of a previous completed run of the step when it is still current.
std::optional<json> current_summary(const RunConfig& cfg, const Step& s, const Invocation& inv) {
  if (inv.force) return std::nullopt;
  const auto p = manifest_path(cfg, s);
  if (!fs::exists(p)) return std::nullopt;
  const auto m = read_json_file(p);
  if (m.value("status", "") != "ok" || m.value("key", "") != s.key()) return std::nullopt;
  for (const auto& o : m["outputs"])
    if (!fs::exists(o["path"].get<std::string>())) return std::nullopt;
  spdlog::info("{}: outputs are current (manifest {}); use --force to rerun", s.name, p.string());
  auto summary = m["summary"];
  summary["skipped"] = true;
  return summary;
}

void write_step(const RunConfig& cfg, const Step& s, const json& summary, const Invocation& inv,
                const std::string& started, const std::string& status = "ok") {
  json outputs = json::array();
  for (const auto& o : s.outputs) {
    json row{{"path", o.string()}};
    if (fs::exists(o)) row["hash"] = to_hex(path_hash(o));
    outputs.push_back(row);
  }
  json m{{"step", s.name},
         {"status", status},
         {"key", s.key()},
         {"argv", inv.argv},
         {"started", started},
         {"finished", now_iso()},
         {"run_seed", cfg.seed},
         {"seeds", s.seeds},
         {"fingerprint", s.fingerprint},
         {"inputs", s.inputs},
         {"outputs", outputs},
         {"summary", summary}};
  write_json_file(manifest_path(cfg, s), m);
  append_jsonl(cfg.output_dir / "manifests" / "history.jsonl",
               {{"step", s.name}, {"status", status}, {"finished", m["finished"]}, {"key", m["key"]}});
}

void write_checkpoint_metadata(const fs::path& dir, const json& meta) { write_json_file(dir / "metadata.json", meta); }

// ---- workspace: tokenizers, corpora and base checkpoints of one run ----

class Workspace {
 public:
  explicit Workspace(const RunConfig& cfg) : cfg_(cfg), lock_(cfg.output_dir) {
    write_json_file(cfg.output_dir / "config.resolved.json", run_config_to_json(cfg));
  }

  const RunConfig& cfg() const { return cfg_; }
  fs::path out(const fs::path& rel) const { return cfg_.output_dir / rel; }

  const corpus::Tokenizer& gen_tok() {
    if (!gen_tok_) gen_tok_ = load_tokenizer(cfg_.generator_tokenizer, "tokenizers.generator");
    return *gen_tok_;
  }
  const corpus::Tokenizer& reader_tok() {
    if (!reader_tok_) {
      if (cfg_.reader_tokenizer)
        reader_tok_ = load_tokenizer(cfg_.reader_tokenizer, "tokenizers.reader");
      else
        reader_tok_ = load_tokenizer(cfg_.generator_tokenizer, "tokenizers.generator");
    }
    return *reader_tok_;
  }

  // Loads a configured corpus; its documents join the shared index.
  const corpus::Corpus& corpus(const std::optional<fs::path>& p, const std::string& field) {
    if (!p) throw ConfigError("run config: data." + field + " is required for this command");
    auto it = corpora_.find(*p);
    if (it != corpora_.end()) return *it->second;
    auto c = std::make_unique<corpus::Corpus>(corpus::load_corpus(*p));
    for (const auto& d : c->documents) index_.try_emplace(d.id, &d);
    return *corpora_.emplace(*p, std::move(c)).first->second;
  }
  const corpus::Corpus* maybe_corpus(const std::optional<fs::path>& p, const std::string& field) {
    return p ? &corpus(p, field) : nullptr;
  }
  const corpus::DocumentIndex& index() const { return index_; }

  // Documents fed to synthesis.
  std::span<const corpus::Document> unlabeled() {
    if (cfg_.data.unlabeled) return corpus(cfg_.data.unlabeled, "unlabeled").documents;
    return corpus(cfg_.data.target_pool, "target_pool").documents;
  }

  fs::path generator_checkpoint() const {
    return cfg_.generator_checkpoint.value_or(out("checkpoints/generator_source"));
  }
  fs::path reader_checkpoint() const { return cfg_.reader_checkpoint.value_or(out("checkpoints/reader_source")); }
  fs::path synthetic_reader_checkpoint() const {
    return cfg_.synthetic_reader_checkpoint.value_or(out("checkpoints/reader_synthetic"));
  }

  static void require_checkpoint(const fs::path& p, const std::string& hint) {
    if (!fs::exists(p)) throw DataError("missing checkpoint " + p.string() + " (" + hint + ")");
  }

  generator::GenerationBackendPtr fresh_generator(std::uint64_t seed) {
    return generator::make_generation_backend(cfg_.generator.id, gen_tok().vocab_size(), seed, cfg_.generator.options);
  }
  reader::ReaderBackendPtr fresh_reader(std::uint64_t seed) {
    return reader::make_reader_backend(cfg_.reader.id, reader_tok().vocab_size(), seed, cfg_.reader.options);
  }

 private:
  static std::shared_ptr<corpus::Tokenizer> load_tokenizer(const std::optional<fs::path>& p, const std::string& field) {
    if (!p) throw ConfigError("run config: " + field + " is required for this command");
    if (!fs::exists(*p)) throw DataError("tokenizer file " + p->string() + " does not exist");
    return corpus::VocabTokenizer::load(*p);
  }

  const RunConfig& cfg_;
  RunLock lock_;
  std::shared_ptr<corpus::Tokenizer> gen_tok_, reader_tok_;
  std::map<fs::path, std::unique_ptr<corpus::Corpus>> corpora_;
  corpus::DocumentIndex index_;
};

// Holdout by document: the last `fraction` of documents (at least one) when there are two or more.
std::pair<std::vector<QASample>, std::vector<QASample>> holdout(const corpus::Corpus& c, double fraction) {
  std::set<std::string> dev_docs;
  const auto n = c.documents.size();
  const std::size_t k = n < 2 ? 0 : std::max<std::size_t>(1, static_cast<std::size_t>(n * fraction));
  for (std::size_t i = n - k; i < n; ++i) dev_docs.insert(c.documents[i].id);
  std::vector<QASample> train, dev;
  for (const auto& s : c.samples) (dev_docs.count(s.document_id) ? dev : train).push_back(s);
  return {train, dev};
}

std::vector<generator::TrainingPair> pairs_for(std::span<const QASample> samples, const corpus::DocumentIndex& docs,
                                               const corpus::Tokenizer& tok, const generator::GenInputLayout& layout) {
  std::vector<generator::TrainingPair> out;
  for (const auto& s : samples) {
    auto it = docs.find(s.document_id);
    if (it == docs.end()) throw DataError("sample " + s.id + " refers to unknown document " + s.document_id);
    auto p = generator::build_training_pairs(s, *it->second, tok, layout);
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

json eval_json(const reader::EvalReport& r) { return {{"em", r.em}, {"f1", r.f1}, {"n", r.n}}; }

void write_corpus(const fs::path& dir, const std::string& name, const std::string& domain,
                  const std::vector<corpus::Document>& docs, const std::vector<QASample>& samples,
                  const std::string& tokenizer_id, std::size_t rejected = 0) {
  fs::create_directories(dir);
  corpus::write_documents(dir / "documents.jsonl", docs);
  corpus::write_samples(dir / "samples.jsonl", samples, corpus::index_documents(docs));
  corpus::CorpusManifest m;
  m.name = name;
  m.domain = domain;
  m.documents_path = "documents.jsonl";
  m.samples_path = "samples.jsonl";
  m.tokenizer_id = tokenizer_id;
  m.documents = docs.size();
  m.samples = samples.size();
  m.rejected = rejected;
  corpus::write_manifest(dir / "manifest.json", m);
}

}  // namespace

// ---- make-toy ----

json make_toy(const MakeToyOptions& o) {
  if (o.source_docs == 0 || o.target_docs < 3) throw ConfigError("make-toy: need source documents and at least 3 target documents");
  if (o.dev_fraction <= 0 || o.eval_fraction <= 0 || o.dev_fraction + o.eval_fraction >= 1)
    throw ConfigError("make-toy: dev and eval fractions must be positive and sum below 1");
  corpus::ToyCorpusOptions so;
  so.documents = o.source_docs;
  so.seed = o.seed;
  so.id_prefix = "src";
  auto source = corpus::make_toy_corpus(so);
  auto to = so;
  to.style = corpus::ToyCorpusOptions::Style::target;
  to.documents = o.target_docs;
  to.seed = derive_seed(o.seed, "target", 0);
  to.id_prefix = "tgt";
  auto target = corpus::make_toy_corpus(to);

  auto tok = std::make_shared<corpus::VocabTokenizer>();
  std::vector<std::string> texts;
  for (auto* c : {&source, &target}) {
    for (const auto& d : c->documents) texts.push_back(d.text);
    for (const auto& s : c->samples) texts.push_back(s.question);
  }
  tok->fit(texts);
  fs::create_directories(o.out);
  tok->save(o.out / "tokenizer.json");

  write_corpus(o.out / "source", "toy-source", "source", source.documents, source.samples, tok->id());
  const std::size_t n = target.documents.size();
  const auto n_dev = std::max<std::size_t>(1, static_cast<std::size_t>(n * o.dev_fraction));
  const auto n_eval = std::max<std::size_t>(1, static_cast<std::size_t>(n * o.eval_fraction));
  const std::size_t n_pool = n - n_dev - n_eval;
  auto split = [&](const std::string& name, std::size_t from, std::size_t to_) {
    std::vector<corpus::Document> docs(target.documents.begin() + from, target.documents.begin() + to_);
    std::set<std::string> ids;
    for (const auto& d : docs) ids.insert(d.id);
    std::vector<QASample> samples;
    for (const auto& s : target.samples)
      if (ids.count(s.document_id)) samples.push_back(s);
    write_corpus(o.out / name, "toy-" + name, "target", docs, samples, tok->id());
    return json{{"documents", docs.size()}, {"samples", samples.size()}};
  };
  json counts{{"source", {{"documents", source.documents.size()}, {"samples", source.samples.size()}}},
              {"target_pool", split("target_pool", 0, n_pool)},
              {"target_dev", split("target_dev", n_pool, n_pool + n_dev)},
              {"target_eval", split("target_eval", n_pool + n_dev, n)}};

  // Hyperparameters scaled for the toy backends.
  json run{{"output_dir", "run"},
           {"seed", o.seed},
           {"data",
            {{"source", "source/manifest.json"},
             {"target_pool", "target_pool/manifest.json"},
             {"target_dev", "target_dev/manifest.json"},
             {"target_eval", "target_eval/manifest.json"}}},
           {"tokenizers", {{"generator", "tokenizer.json"}, {"reader", "tokenizer.json"}}},
           {"generator_train",
            {{"learning_rate", 0.01}, {"batch_size", 8}, {"epochs_source", 3}, {"epochs_target", 2},
             {"warmup_fraction", 0.05}}},
           {"reader_train", {{"learning_rate", 0.005}, {"batch_size", 16}, {"epochs", 3}}},
           {"decode", {{"beam_size", 4}, {"max_answer_tokens", 8}}},
           {"synthesis", {{"min_context_tokens", 50}, {"questions_per_context", 3}, {"lm_filter_top_n", 2}}},
           {"ensemble", {{"passes", 4}}},
           {"recipe", {{"placement", "al_on_generator"}, {"strategy", "rt"}, {"iterations", 4}, {"batch", 10}}}};
  write_json_file(o.out / "run.json", run);
  return {{"out", o.out.string()}, {"tokenizer", tok->id()}, {"vocab", tok->vocab_size()}, {"counts", counts}};
}

// ---- ingest ----

json ingest(const IngestCommand& o) {
  corpus::IngestOptions io;
  io.domain = o.domain;
  io.documents_path = o.documents;
  io.max_rejected_fraction = o.max_rejected_fraction;
  std::shared_ptr<corpus::VocabTokenizer> tok;
  if (o.tokenizer) {
    tok = corpus::VocabTokenizer::load(*o.tokenizer);
    io.tokenizer = tok.get();
  }
  auto res = corpus::ingest_dataset(o.input, corpus::dataset_format_from_string(o.format), io);
  const auto name = o.name.empty() ? o.input.stem().string() : o.name;
  // Documents are written without token counts; loaders recount under their tokenizer.
  write_corpus(o.out, name, o.domain, res.documents, res.samples, tok ? tok->id() : "", res.rejected.size());
  std::vector<json> rejected;
  for (const auto& r : res.rejected) rejected.push_back({{"record", r.record}, {"reason", r.reason}});
  write_jsonl(o.out / "rejected.jsonl", rejected);
  json summary{{"input", o.input.string()},
               {"input_hash", to_hex(file_hash(o.input))},
               {"records_seen", res.records_seen},
               {"documents", res.documents.size()},
               {"samples", res.samples.size()},
               {"rejected", res.rejected.size()},
               {"skipped_unanswerable", res.skipped_unanswerable},
               {"duplicate_documents", res.duplicate_documents},
               {"manifest", (o.out / "manifest.json").string()}};
  write_json_file(o.out / "ingest_report.json", summary);
  return summary;
}

// ---- train-gen ----

json train_gen(const RunConfig& cfg, const TrainGenCommand& o, const Invocation& inv) {
  if (o.stage != "source" && o.stage != "target") throw ConfigError("train-gen: --stage must be source or target");
  Workspace ws(cfg);
  const auto& x = cfg.experiment;
  Step step{"train-gen-" + o.stage};
  step.fingerprint = {{"backend", cfg.generator.id}, {"options", cfg.generator.options},
                      {"generator_train", x.generator_train}, {"layout", x.layout}};
  step.seeds = {{"init", module_seed(cfg.seed, "generator_init")}, {"train", x.generator_train.seed}};
  const auto ckpt = ws.out("checkpoints/generator_" + o.stage);
  step.outputs = {ckpt};
  step.input("tokenizer", *cfg.generator_tokenizer);
  if (o.stage == "source") {
    step.input("source", cfg.data.source.value_or(""), true);
  } else {
    step.input("target_pool", cfg.data.target_pool.value_or(""), true);
    if (cfg.data.target_dev) step.input("target_dev", *cfg.data.target_dev, true);
    Workspace::require_checkpoint(ws.generator_checkpoint(), "run `alqa train-gen --stage source` first");
    step.input("base", ws.generator_checkpoint());
  }
  if (auto s = current_summary(cfg, step, inv)) return *s;
  const auto started = now_iso();

  const auto& tok = ws.gen_tok();
  std::vector<QASample> train, dev;
  generator::GenerationBackendPtr be;
  if (o.stage == "source") {
    std::tie(train, dev) = holdout(ws.corpus(cfg.data.source, "source"), 0.1);
    be = ws.fresh_generator(step.seeds["init"]);
  } else {
    train = ws.corpus(cfg.data.target_pool, "target_pool").samples;
    if (auto* d = ws.maybe_corpus(cfg.data.target_dev, "target_dev")) dev = d->samples;
    be = generator::load_generation_backend(ws.generator_checkpoint());
  }
  const auto train_pairs = pairs_for(train, ws.index(), tok, x.layout);
  const auto dev_pairs = pairs_for(dev, ws.index(), tok, x.layout);
  if (train_pairs.empty()) throw DataError("train-gen: no training pairs (no answer fits the generator context budget)");
  spdlog::info("train-gen {}: {} train pairs, {} dev pairs", o.stage, train_pairs.size(), dev_pairs.size());
  const auto log = generator::train_generator(*be, train_pairs, x.generator_train, dev_pairs,
                                              o.stage == "source" ? generator::TrainStage::source
                                                                  : generator::TrainStage::target);
  fs::remove_all(ckpt);
  be->save(ckpt);
  const auto log_rows = log.to_jsonl_rows();
  std::vector<json> rows(log_rows.begin(), log_rows.end());
  write_jsonl(ckpt / "train_log.jsonl", rows);
  json summary{{"checkpoint", ckpt.string()},
               {"train_pairs", train_pairs.size()},
               {"dev_pairs", dev_pairs.size()},
               {"best_epoch", log.best_epoch},
               {"best_dev_loss", log.best_dev_loss},
               {"weights_hash", to_hex(be->weights_hash())}};
  write_checkpoint_metadata(ckpt, {{"kind", "generator"},
                                   {"stage", o.stage},
                                   {"backend_id", be->backend_id()},
                                   {"weights_hash", to_hex(be->weights_hash())},
                                   {"tokenizer", tok.id()},
                                   {"config", step.fingerprint},
                                   {"seeds", step.seeds},
                                   {"inputs", step.inputs},
                                   {"summary", summary},
                                   {"created", now_iso()}});
  write_step(cfg, step, summary, inv, started);
  return summary;
}

// ---- train-reader ----

json train_reader(const RunConfig& cfg, const TrainReaderCommand& o, const Invocation& inv) {
  if (o.on != "source" && o.on != "target" && o.on != "synthetic")
    throw ConfigError("train-reader: --on must be source, target or synthetic");
  Workspace ws(cfg);
  const auto& rc = cfg.experiment.reader_train;
  Step step{"train-reader-" + o.on};
  step.fingerprint = {{"backend", cfg.reader.id}, {"options", cfg.reader.options}, {"reader_train", rc}};
  step.seeds = {{"init", module_seed(cfg.seed, "reader_init")}, {"train", rc.seed}};
  const auto ckpt = ws.out("checkpoints/reader_" + o.on);
  step.outputs = {ckpt};
  const auto tok_path = cfg.reader_tokenizer ? cfg.reader_tokenizer : cfg.generator_tokenizer;
  if (!tok_path) throw ConfigError("run config: tokenizers.reader is required for this command");
  step.input("tokenizer", *tok_path);
  const auto synthetic = o.synthetic.value_or(ws.out("synthetic/filtered.jsonl"));
  if (o.on == "source") step.input("source", cfg.data.source.value_or(""), true);
  if (o.on == "target") step.input("target_pool", cfg.data.target_pool.value_or(""), true);
  if (o.on == "synthetic") {
    if (!fs::exists(synthetic)) throw DataError("synthetic corpus " + synthetic.string() + " does not exist; run `alqa filter`");
    step.input("synthetic", synthetic);
  }
  if (o.on != "source" && cfg.data.target_dev) step.input("target_dev", *cfg.data.target_dev, true);
  if (cfg.data.target_eval) step.input("target_eval", *cfg.data.target_eval, true);
  if (auto s = current_summary(cfg, step, inv)) return *s;
  const auto started = now_iso();

  const auto& tok = ws.reader_tok();
  std::vector<QASample> train, dev;
  if (o.on == "source") {
    std::tie(train, dev) = holdout(ws.corpus(cfg.data.source, "source"), 0.1);
  } else {
    if (o.on == "target") {
      train = ws.corpus(cfg.data.target_pool, "target_pool").samples;
    } else {
      ws.unlabeled();  // synthetic samples reference the synthesis documents
      train = synthesis::plain_samples(synthesis::read_synthetic(synthetic, ws.index()));
    }
    if (auto* d = ws.maybe_corpus(cfg.data.target_dev, "target_dev")) dev = d->samples;
  }
  const auto* eval = ws.maybe_corpus(cfg.data.target_eval, "target_eval");
  if (train.empty()) throw DataError("train-reader: no training samples");
  auto be = ws.fresh_reader(step.seeds["init"]);
  spdlog::info("train-reader {}: {} train samples, {} dev samples", o.on, train.size(), dev.size());
  const auto log = reader::train_reader(*be, tok, train, ws.index(), rc, dev, &ws.index());
  fs::remove_all(ckpt);
  be->save(ckpt);
  const auto log_rows = log.to_jsonl_rows();
  std::vector<json> rows(log_rows.begin(), log_rows.end());
  write_jsonl(ckpt / "train_log.jsonl", rows);
  json summary{{"checkpoint", ckpt.string()},
               {"train_samples", train.size()},
               {"examples", log.examples},
               {"best_epoch", log.best_epoch},
               {"best_dev_f1", opt_json(log.best_dev_f1)},
               {"weights_hash", to_hex(be->weights_hash())}};
  if (eval) {
    const auto rep = reader::evaluate(*be, tok, eval->samples, ws.index(), rc, cfg.experiment.workers);
    reader::write_eval_report(rep, ckpt / "eval");
    summary["eval"] = eval_json(rep);
  }
  write_checkpoint_metadata(ckpt, {{"kind", "reader"},
                                   {"trained_on", o.on},
                                   {"backend_id", be->backend_id()},
                                   {"weights_hash", to_hex(be->weights_hash())},
                                   {"tokenizer", tok.id()},
                                   {"config", step.fingerprint},
                                   {"seeds", step.seeds},
                                   {"inputs", step.inputs},
                                   {"summary", summary},
                                   {"created", now_iso()}});
  write_step(cfg, step, summary, inv, started);
  return summary;
}

// ---- synthesize / filter ----

json synthesize(const RunConfig& cfg, const SynthesizeCommand& o, const Invocation& inv) {
  Workspace ws(cfg);
  const auto& x = cfg.experiment;
  const auto gen_path = o.generator.value_or(ws.generator_checkpoint());
  Workspace::require_checkpoint(gen_path, "run `alqa train-gen` first");
  const auto out = o.out.value_or(ws.out("synthetic/raw.jsonl"));
  Step step{"synthesize"};
  step.fingerprint = {{"synthesis", x.synthesis}, {"layout", x.layout}, {"decode", x.decode}};
  step.seeds = {{"synthesis", x.synthesis.seed}};
  step.outputs = {out};
  step.input("generator", gen_path);
  step.input("tokenizer", *cfg.generator_tokenizer);
  step.input("documents", cfg.data.unlabeled ? *cfg.data.unlabeled : cfg.data.target_pool.value_or(""), true);
  if (auto s = current_summary(cfg, step, inv)) return *s;
  const auto started = now_iso();

  auto be = generator::load_generation_backend(gen_path);
  const auto docs = ws.unlabeled();
  auto res = synthesis::synthesize_corpus(*be, docs, ws.gen_tok(), x.synthesis, x.layout, x.decode);
  synthesis::write_synthetic(out, res.samples, ws.index());
  write_json_file(out.parent_path() / "generation_report.json", res.report.to_json());
  json summary{{"output", out.string()}, {"samples", res.samples.size()}, {"report", res.report.to_json()}};
  write_step(cfg, step, summary, inv, started);
  return summary;
}

json filter(const RunConfig& cfg, const FilterCommand& o, const Invocation& inv) {
  Workspace ws(cfg);
  auto sc = cfg.experiment.synthesis;
  if (o.mode) sc.filter_mode = synthesis::filter_mode_from_string(*o.mode);
  const auto in = o.input.value_or(ws.out("synthetic/raw.jsonl"));
  const auto out = o.out.value_or(ws.out("synthetic/filtered.jsonl"));
  if (!fs::exists(in)) throw DataError("synthetic corpus " + in.string() + " does not exist; run `alqa synthesize`");
  const bool rt = sc.filter_mode == synthesis::FilterMode::rtcons || sc.filter_mode == synthesis::FilterMode::both;
  const auto reader_path = o.reader.value_or(ws.reader_checkpoint());
  Step step{"filter"};
  step.fingerprint = {{"synthesis", sc}, {"reader_train", cfg.experiment.reader_train}};
  step.outputs = {out};
  step.input("synthetic", in);
  if (rt) {
    Workspace::require_checkpoint(reader_path, "RTcons needs a reader; run `alqa train-reader` first");
    step.input("reader", reader_path);
  }
  if (auto s = current_summary(cfg, step, inv)) return *s;
  const auto started = now_iso();

  ws.unlabeled();
  auto samples = synthesis::read_synthetic(in, ws.index());
  reader::ReaderBackendPtr rd;
  synthesis::FilterContext fc;
  if (rt) {
    rd = reader::load_reader_backend(reader_path);
    fc.reader = rd.get();
    fc.reader_tokenizer = &ws.reader_tok();
  }
  fc.docs = &ws.index();
  fc.reader_cfg = cfg.experiment.reader_train;
  synthesis::FilterReport rep;
  auto kept = synthesis::apply_filters(samples, sc, fc, &rep);
  synthesis::write_synthetic(out, kept, ws.index());
  // verdicts are stored inline on the input as well, so later runs can re-filter
  synthesis::write_synthetic(in, samples, ws.index());
  write_json_file(out.parent_path() / "filter_report.json", rep.to_json());
  json summary{{"output", out.string()},
               {"mode", std::string(synthesis::to_string(sc.filter_mode))},
               {"report", rep.to_json()}};
  write_step(cfg, step, summary, inv, started);
  return summary;
}

// ---- score ----

json score(const RunConfig& cfg, const ScoreCommand& o, const Invocation& inv) {
  Workspace ws(cfg);
  const auto strategy = acquisition::strategy_from_string(o.strategy);
  const auto& x = cfg.experiment;
  const std::size_t n = o.select.value_or(x.recipe.batch);
  const auto out = ws.out("scores/" + o.strategy + ".jsonl");
  Step step{"score-" + o.strategy};
  step.fingerprint = {{"ensemble", x.ensemble}, {"layout", x.layout}, {"decode", x.decode},
                      {"reader_train", x.reader_train}, {"iteration", o.iteration}, {"select", n}};
  step.seeds = {{"ensemble", x.ensemble.base_seed}};
  step.outputs = {out, ws.out("scores/" + o.strategy + "_selected.json")};
  step.input("target_pool", cfg.data.target_pool.value_or(""), true);
  const bool gen = acquisition::needs_generator(strategy), rd = acquisition::needs_reader(strategy);
  if (gen) {
    Workspace::require_checkpoint(ws.generator_checkpoint(), "run `alqa train-gen` first");
    step.input("generator", ws.generator_checkpoint());
  }
  if (rd) {
    Workspace::require_checkpoint(ws.reader_checkpoint(), "run `alqa train-reader` first");
    step.input("reader", ws.reader_checkpoint());
  }
  if (auto s = current_summary(cfg, step, inv)) return *s;
  const auto started = now_iso();

  const auto& pool = ws.corpus(cfg.data.target_pool, "target_pool");
  generator::GenerationBackendPtr g;
  reader::ReaderBackendPtr r;
  acquisition::ScoringModels m;
  if (gen) {
    g = generator::load_generation_backend(ws.generator_checkpoint());
    m.generator = g.get();
    m.generator_tokenizer = &ws.gen_tok();
  }
  if (rd) {
    r = reader::load_reader_backend(ws.reader_checkpoint());
    m.reader = r.get();
    m.reader_tokenizer = &ws.reader_tok();
  }
  m.layout = x.layout;
  m.reader_cfg = x.reader_train;
  m.beam_size = x.decode.beam_size;
  m.max_answer_tokens = x.decode.max_answer_tokens;
  std::vector<acquisition::Candidate> cands;
  if (acquisition::scores_contexts(strategy)) {
    for (const auto& d : pool.documents) cands.push_back({d.id, d.text, ""});
  } else {
    for (const auto& s : pool.samples) cands.push_back({s.id, pool.index.at(s.document_id)->text, s.question});
  }
  auto scores = acquisition::score_pool(strategy, m, cands, x.ensemble, o.iteration, x.workers);
  acquisition::write_score_dump(out, scores);
  const auto selected = acquisition::rank_and_select(scores, n);
  write_json_file(step.outputs[1], {{"strategy", o.strategy}, {"selected", selected}});
  const auto flagged = std::count_if(scores.begin(), scores.end(), [](const auto& s) { return !s.flags.empty(); });
  json summary{{"dump", out.string()}, {"candidates", scores.size()}, {"selected", selected.size()}, {"flagged", flagged}};
  write_step(cfg, step, summary, inv, started);
  return summary;
}

// ---- experiments ----

namespace {

struct ExperimentInputs {
  std::vector<QASample> pool, dev, eval;
};

json record_summary(const loop::ExperimentRecord& rec, const fs::path& dir) {
  json its = json::array();
  for (const auto& it : rec.iterations)
    its.push_back({{"iteration", it.iteration}, {"selected", it.selected.size()}, {"annotations", it.annotations},
                   {"eval_f1", opt_json(it.eval_f1)}, {"eval_em", opt_json(it.eval_em)}, {"flagged", it.flagged}});
  return {{"dir", dir.string()},
          {"status", std::string(loop::to_string(rec.status))},
          {"iterations", its},
          {"labeled", rec.pool.labeled.size()},
          {"annotated", rec.annotated.size()},
          {"final_em", opt_json(rec.final_em)},
          {"final_f1", opt_json(rec.final_f1)}};
}

// Lazily loaded base models shared by the factories of one experiment.
struct BaseModels {
  Workspace& ws;
  fs::path gen_path, reader_path;
  generator::GenerationBackendPtr gen;
  reader::ReaderBackendPtr reader;

  loop::BackendFactories factories() {
    const std::uint64_t fresh_seed = module_seed(ws.cfg().seed, "reader_init");
    return {[this]() -> generator::GenerationBackendPtr {
              if (!gen) {
                Workspace::require_checkpoint(gen_path, "run `alqa train-gen` first");
                gen = generator::load_generation_backend(gen_path);
              }
              return gen->clone();
            },
            [this]() -> reader::ReaderBackendPtr {
              if (!reader) {
                Workspace::require_checkpoint(reader_path, "run `alqa train-reader` first");
                reader = reader::load_reader_backend(reader_path);
              }
              return reader->clone();
            },
            [this, fresh_seed] { return ws.fresh_reader(fresh_seed); }};
  }
};

}  // namespace

json al_run(const RunConfig& cfg_in, const AlRunCommand& o, const Invocation& inv) {
  RunConfig cfg = cfg_in;
  auto& recipe = cfg.experiment.recipe;
  if (o.placement) recipe.placement = loop::placement_from_string(*o.placement);
  if (o.strategy) recipe.strategy = acquisition::strategy_from_string(*o.strategy);
  if (loop::is_baseline(recipe.placement)) throw ConfigError("al-run: use `alqa baseline` for baseline placements");
  recipe.validate();
  const auto name = o.name.value_or(std::string(loop::to_string(recipe.placement)) + "-" +
                                    std::string(acquisition::to_string(recipe.effective_strategy())));
  Workspace ws(cfg);
  const auto dir = ws.out("experiments/" + name);
  const bool gen_side = loop::generator_side(recipe.placement);
  const bool after_synth = recipe.placement == loop::Placement::al_on_reader_after_synthetic;
  BaseModels base{ws, ws.generator_checkpoint(), after_synth ? ws.synthetic_reader_checkpoint() : ws.reader_checkpoint()};

  Step step{"al-run-" + name};
  step.fingerprint = {{"experiment", cfg.experiment}, {"annotation_mode", cfg.annotation.mode}};
  step.seeds = {{"recipe", recipe.seed}, {"ensemble", cfg.experiment.ensemble.base_seed},
                {"generator_train", cfg.experiment.generator_train.seed},
                {"reader_train", cfg.experiment.reader_train.seed}};
  step.outputs = {dir / "record.json"};
  step.input("target_pool", cfg.data.target_pool.value_or(""), true);
  if (cfg.data.target_dev) step.input("target_dev", *cfg.data.target_dev, true);
  if (cfg.data.target_eval) step.input("target_eval", *cfg.data.target_eval, true);
  if (cfg.data.unlabeled) step.input("unlabeled", *cfg.data.unlabeled, true);
  if (fs::exists(base.gen_path)) step.input("generator", base.gen_path);
  if (fs::exists(base.reader_path)) step.input("reader", base.reader_path);
  if (!o.resume)
    if (auto s = current_summary(cfg, step, inv)) return *s;
  const auto started = now_iso();

  ExperimentInputs in;
  in.pool = ws.corpus(cfg.data.target_pool, "target_pool").samples;
  if (auto* d = ws.maybe_corpus(cfg.data.target_dev, "target_dev")) in.dev = d->samples;
  if (auto* e = ws.maybe_corpus(cfg.data.target_eval, "target_eval")) in.eval = e->samples;
  const auto unlabeled = ws.unlabeled();
  const loop::ExperimentData data{in.pool, in.dev, in.eval, unlabeled, &ws.index()};
  const bool needs_gen = gen_side || acquisition::needs_generator(recipe.effective_strategy());
  const loop::Tokenizers tk{needs_gen ? &ws.gen_tok() : nullptr, &ws.reader_tok()};

  loop::ExperimentRecord rec;
  if (cfg.annotation.mode == "live") {
    const auto store_dir = cfg.annotation.store_dir.value_or(ws.out("annotation"));
    annotation::AnnotationStore store({cfg.annotation.lease_minutes * 60 * 1000, store_dir});
    annotation::AnnotationServer server(store);
    const int port = server.bind(cfg.annotation.host, cfg.annotation.port);
    spdlog::info("annotation service listening on http://{}:{}", cfg.annotation.host, port);
    std::thread th([&] { server.listen(); });
    annotation::LiveAnnotator live(store, {name + ".", std::chrono::milliseconds(cfg.annotation.poll_ms),
                                           std::chrono::seconds(cfg.annotation.timeout_s)});
    try {
      rec = loop::run_al(base.factories(), tk, data, cfg.experiment, live, dir, o.resume);
    } catch (...) {
      server.stop();
      th.join();
      throw;
    }
    server.stop();
    th.join();
  } else {
    loop::OracleAnnotator oracle(in.pool);
    rec = loop::run_al(base.factories(), tk, data, cfg.experiment, oracle, dir, o.resume);
  }
  auto summary = record_summary(rec, dir);
  const bool done = rec.status != loop::ExperimentRecord::Status::suspended;
  write_step(cfg, step, summary, inv, started, done ? "ok" : "suspended");
  if (!done) spdlog::warn("al-run: experiment suspended; rerun with --resume once the batch is labeled");
  return summary;
}

json baseline(const RunConfig& cfg_in, const BaselineCommand& o, const Invocation& inv) {
  RunConfig cfg = cfg_in;
  auto& recipe = cfg.experiment.recipe;
  recipe.placement = loop::placement_from_string(o.placement);
  if (!loop::is_baseline(recipe.placement))
    throw ConfigError("baseline: --recipe must be target_only_baseline or source_plus_target_baseline");
  recipe.validate();
  const auto name = o.name.value_or(std::string(loop::to_string(recipe.placement)));
  Workspace ws(cfg);
  const auto dir = ws.out("experiments/" + name);
  BaseModels base{ws, ws.generator_checkpoint(), ws.reader_checkpoint()};
  Step step{"baseline-" + name};
  step.fingerprint = {{"experiment", cfg.experiment}};
  step.seeds = {{"recipe", recipe.seed}, {"reader_train", cfg.experiment.reader_train.seed}};
  step.outputs = {dir / "record.json"};
  step.input("target_pool", cfg.data.target_pool.value_or(""), true);
  if (cfg.data.target_dev) step.input("target_dev", *cfg.data.target_dev, true);
  if (cfg.data.target_eval) step.input("target_eval", *cfg.data.target_eval, true);
  if (recipe.placement == loop::Placement::source_plus_target_baseline) {
    Workspace::require_checkpoint(base.reader_path, "run `alqa train-reader --on source` first");
    step.input("reader", base.reader_path);
  }
  if (auto s = current_summary(cfg, step, inv)) return *s;
  const auto started = now_iso();

  ExperimentInputs in;
  in.pool = ws.corpus(cfg.data.target_pool, "target_pool").samples;
  if (auto* d = ws.maybe_corpus(cfg.data.target_dev, "target_dev")) in.dev = d->samples;
  if (auto* e = ws.maybe_corpus(cfg.data.target_eval, "target_eval")) in.eval = e->samples;
  const loop::ExperimentData data{in.pool, in.dev, in.eval, {}, &ws.index()};
  auto rec = loop::run_baseline(base.factories(), {nullptr, &ws.reader_tok()}, data, cfg.experiment, dir);
  auto summary = record_summary(rec, dir);
  write_step(cfg, step, summary, inv, started);
  return summary;
}

// ---- evaluate ----

json evaluate(const std::optional<RunConfig>& cfg, const EvaluateCommand& o) {
  reader::EvalReport rep;
  if (o.predictions) {
    if (!o.gold) throw ConfigError("evaluate: --predictions needs --gold");
    auto gold = corpus::load_corpus(*o.gold);
    std::map<std::string, std::string> preds;
    const auto ext = o.predictions->extension().string();
    if (ext == ".jsonl") {
      for (const auto& row : read_jsonl(*o.predictions)) {
        if (!row.contains("id") || !row.contains("prediction"))
          throw DataError("evaluate: prediction rows need 'id' and 'prediction'");
        preds[row["id"].get<std::string>()] = row["prediction"].get<std::string>();
      }
    } else {
      const auto j = read_json_file(*o.predictions);
      if (!j.is_object()) throw DataError("evaluate: predictions JSON must map ids to answers");
      for (const auto& [k, v] : j.items()) preds[k] = v.get<std::string>();
    }
    std::vector<std::string> aligned;
    std::size_t missing = 0;
    for (const auto& s : gold.samples) {
      auto it = preds.find(s.id);
      if (it == preds.end()) ++missing;
      aligned.push_back(it == preds.end() ? std::string() : it->second);
    }
    if (missing) spdlog::warn("evaluate: {} gold samples have no prediction; scored as empty", missing);
    rep = reader::evaluate_predictions(gold.samples, aligned);
  } else {
    if (!cfg) throw ConfigError("evaluate: pass --predictions/--gold or --config with --checkpoint");
    if (!o.checkpoint) throw ConfigError("evaluate: --checkpoint is required with --config");
    Workspace ws(*cfg);
    const auto& split = o.split == "dev" ? cfg->data.target_dev : cfg->data.target_eval;
    if (o.split != "dev" && o.split != "eval") throw ConfigError("evaluate: --split must be dev or eval");
    const auto& c = ws.corpus(split, o.split == "dev" ? "target_dev" : "target_eval");
    auto be = reader::load_reader_backend(*o.checkpoint);
    rep = reader::evaluate(*be, ws.reader_tok(), c.samples, ws.index(), cfg->experiment.reader_train,
                           cfg->experiment.workers);
  }
  if (o.out) reader::write_eval_report(rep, *o.out);
  return eval_json(rep);
}

// ---- reports ----

json report_scores_cmd(const ReportScoresCommand& o) {
  std::vector<report::ScoreDump> dumps;
  for (const auto& p : o.dumps) {
    std::vector<fs::path> files;
    if (fs::is_directory(p)) {
      for (const auto& e : fs::directory_iterator(p))
        if (e.path().extension() == ".jsonl") files.push_back(e.path());
      std::sort(files.begin(), files.end());
    } else {
      files.push_back(p);
    }
    for (const auto& f : files) {
      const auto label = fs::is_directory(p) ? p.filename().string() + "/" + f.stem().string() : f.stem().string();
      dumps.push_back({label, acquisition::read_score_dump(f)});
    }
  }
  if (dumps.empty()) throw DataError("report scores: no score dumps found");
  const auto curves = report::report_scores(dumps);
  report::write_score_csv(o.out / "score_curves.csv", curves);
  const auto summary = report::score_summary(curves);
  write_json_file(o.out / "score_summary.json", summary);
  return {{"csv", (o.out / "score_curves.csv").string()}, {"dumps", dumps.size()}, {"curves", summary}};
}

json report_samples_cmd(const RunConfig& cfg, const ReportSamplesCommand& o) {
  if (o.selections.empty()) throw ConfigError("report samples: pass at least one --selection label=path");
  Workspace ws(cfg);
  for (const auto& p : {cfg.data.target_pool, cfg.data.unlabeled, cfg.data.target_dev, cfg.data.target_eval,
                        cfg.data.source})
    if (p) ws.corpus(p, "selection documents");
  std::vector<report::Selection> sels;
  for (const auto& spec : o.selections) {
    const auto eq = spec.find('=');
    const std::string path = eq == std::string::npos ? spec : spec.substr(eq + 1);
    std::string label = eq == std::string::npos ? fs::path(spec).filename().string() : spec.substr(0, eq);
    report::Selection s{label, {}};
    if (fs::is_directory(path)) {
      s.samples = loop::ExperimentRecord::from_json(read_json_file(fs::path(path) / "record.json"), ws.index()).annotated;
    } else {
      s.samples = corpus::read_samples(path, ws.index());
    }
    sels.push_back(std::move(s));
  }
  std::vector<report::StatsView> views{report::reader_view("rc", ws.reader_tok(), cfg.experiment.reader_train)};
  if (cfg.generator_tokenizer)
    views.push_back(report::generator_view("qa2s", ws.gen_tok(), cfg.experiment.layout));
  const auto stats = report::report_sample_stats(sels, ws.index(), views);
  report::write_stats_csv(o.out / "sample_stats.csv", o.out / "overlap.csv", stats);
  const auto j = report::stats_to_json(stats);
  write_json_file(o.out / "sample_stats.json", j);
  return j;
}

// ---- serve ----

namespace {
std::atomic<annotation::AnnotationServer*> g_server{nullptr};
extern "C" void on_signal(int) {
  if (auto* s = g_server.load()) s->stop();
}
}  // namespace

void serve(const RunConfig& cfg, const ServeCommand& o) {
  const auto dir = cfg.annotation.store_dir.value_or(cfg.output_dir / "annotation");
  RunLock lock(dir);
  annotation::AnnotationStore store({cfg.annotation.lease_minutes * 60 * 1000, dir});
  annotation::AnnotationServer server(store);
  const auto host = o.host.value_or(cfg.annotation.host);
  const int port = server.bind(host, o.port.value_or(cfg.annotation.port));
  spdlog::info("annotation service for {} on http://{}:{}", dir.string(), host, port);
  g_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  server.listen();
  g_server = nullptr;
}

}  // namespace alqa::run
