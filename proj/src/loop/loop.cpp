#include "alqa/loop/loop.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <random>
#include <unordered_map>

#include <spdlog/spdlog.h>

#include "alqa/common/hash.hpp"
#include "alqa/generator/qa2s.hpp"
#include "alqa/reader/reader.hpp"

namespace fs = std::filesystem;

namespace alqa::loop {

namespace {

const std::map<std::string_view, Placement> kPlacements{
    {"al_on_generator", Placement::al_on_generator},
    {"al_on_reader_after_source", Placement::al_on_reader_after_source},
    {"al_on_reader_after_synthetic", Placement::al_on_reader_after_synthetic},
    {"random_baseline", Placement::random_baseline},
    {"target_only_baseline", Placement::target_only_baseline},
    {"source_plus_target_baseline", Placement::source_plus_target_baseline},
};

const char* kStatusNames[] = {"completed", "suspended", "stopped_early"};

const corpus::Document& doc_of(const corpus::DocumentIndex& docs, const std::string& id) {
  auto it = docs.find(id);
  if (it == docs.end()) throw DataError("unknown document '" + id + "'");
  return *it->second;
}

json samples_json(std::span<const corpus::QASample> samples, const corpus::DocumentIndex& docs) {
  json out = json::array();
  for (const auto& s : samples) out.push_back(corpus::sample_to_json(s, doc_of(docs, s.document_id).text));
  return out;
}

std::vector<corpus::QASample> samples_from(const json& rows, const corpus::DocumentIndex& docs) {
  std::vector<corpus::QASample> out;
  for (const auto& r : rows) out.push_back(corpus::sample_from_json(r, doc_of(docs, r.at("document_id")).text));
  return out;
}

void log_event(const fs::path& dir, json row) {
  append_jsonl(dir / "log.jsonl", row);
}

std::string iter_name(int k) { return "iter_" + std::to_string(k); }

json eval_json(const reader::EvalReport& r) { return {{"em", r.em}, {"f1", r.f1}, {"n", r.n}}; }

json provenance_counts(std::span<const corpus::QASample> samples) {
  std::map<std::string, std::size_t> c;
  for (const auto& s : samples) ++c[std::string(corpus::to_string(s.provenance))];
  return c;
}

struct Run {
  const BackendFactories& f;
  const Tokenizers& tok;
  const ExperimentData& data;
  const ExperimentConfig& cfg;
  fs::path dir;

  const corpus::DocumentIndex& docs() const { return *data.docs; }

  void persist(const ExperimentRecord& rec, const json& state) const {
    write_json_file(dir / "record.json", rec.to_json(docs()));
    write_json_file(dir / "state.json", state);
    json metrics{{"iterations", json::array()}, {"phases", rec.phases}};
    for (const auto& it : rec.iterations)
      metrics["iterations"].push_back(
          {{"iteration", it.iteration}, {"eval_em", it.eval_em ? json(*it.eval_em) : json()},
           {"eval_f1", it.eval_f1 ? json(*it.eval_f1) : json()}, {"training", it.training}});
    if (rec.final_f1) metrics["final"] = {{"em", *rec.final_em}, {"f1", *rec.final_f1}};
    write_json_file(dir / "metrics.json", metrics);
  }

  std::optional<reader::EvalReport> evaluate(const reader::ReaderBackend& r) const {
    if (data.eval.empty()) return std::nullopt;
    return reader::evaluate(r, *tok.reader, data.eval, docs(), cfg.reader_train, cfg.workers);
  }

  reader::ReaderTrainLog train_reader(reader::ReaderBackend& r, std::span<const corpus::QASample> samples,
                                      std::uint64_t seed) const {
    auto rc = cfg.reader_train;
    rc.seed = seed;
    return reader::train_reader(r, *tok.reader, samples, docs(), rc, data.dev, data.docs);
  }
};

reader::ReaderBackendPtr checked(reader::ReaderBackendPtr b, const char* what) {
  if (!b) throw PreconditionError(std::string("run_al: factory for ") + what + " returned nothing");
  return b;
}

}  // namespace

// ---- PoolState ----

PoolState PoolState::initial(std::span<const std::string> ids) {
  PoolState s;
  for (const auto& id : ids)
    if (!s.pool.insert(id).second) throw DataError("duplicate candidate id '" + id + "'");
  return s;
}

void PoolState::apply_selection(int iter, std::span<const std::string> selected, Strategy strategy) {
  std::set<std::string> seen;
  for (const auto& id : selected) {
    if (!pool.count(id)) throw PreconditionError("selected id '" + id + "' is not in the pool");
    if (!seen.insert(id).second) throw PreconditionError("id '" + id + "' selected twice");
  }
  for (const auto& id : selected) {
    pool.erase(id);
    labeled.insert(id);
  }
  iteration = iter;
  history.push_back({iter, {selected.begin(), selected.end()}, strategy});
}

void PoolState::check_invariants() const {
  for (const auto& id : labeled)
    if (pool.count(id)) throw PreconditionError("pool state: '" + id + "' is both labeled and in the pool");
  std::size_t total = 0;
  int last = 0;
  for (const auto& h : history) {
    total += h.selected.size();
    if (h.iteration <= last) throw PreconditionError("pool state: history iterations not increasing");
    last = h.iteration;
  }
  if (total != labeled.size()) throw PreconditionError("pool state: history does not account for the labeled set");
}

json PoolState::to_json() const {
  json h = json::array();
  for (const auto& e : history)
    h.push_back({{"iteration", e.iteration}, {"selected", e.selected}, {"strategy", acquisition::to_string(e.strategy)}});
  return {{"labeled", labeled}, {"pool", pool}, {"iteration", iteration}, {"history", h}};
}

PoolState PoolState::from_json(const json& j) {
  PoolState s;
  s.labeled = j.at("labeled").get<std::set<std::string>>();
  s.pool = j.at("pool").get<std::set<std::string>>();
  s.iteration = j.at("iteration").get<int>();
  for (const auto& e : j.at("history"))
    s.history.push_back({e.at("iteration").get<int>(), e.at("selected").get<std::vector<std::string>>(),
                         acquisition::strategy_from_string(e.at("strategy").get<std::string>())});
  s.check_invariants();
  return s;
}

// ---- recipes ----

std::string_view to_string(Placement p) {
  for (const auto& [k, v] : kPlacements)
    if (v == p) return k;
  return "?";
}

Placement placement_from_string(std::string_view s) {
  auto it = kPlacements.find(s);
  if (it == kPlacements.end()) throw ConfigError("unknown placement '" + std::string(s) + "'");
  return it->second;
}

bool is_baseline(Placement p) {
  return p == Placement::target_only_baseline || p == Placement::source_plus_target_baseline;
}

bool generator_side(Placement p) { return p == Placement::al_on_generator || p == Placement::random_baseline; }

Strategy RecipeConfig::effective_strategy() const {
  return placement == Placement::random_baseline ? Strategy::random : strategy;
}

void RecipeConfig::validate() const {
  if (is_baseline(placement)) return;
  const Strategy s = effective_strategy();
  if (generator_side(placement) && s == Strategy::bald)
    throw ValidationError("recipe.strategy", "bald scores reader samples; use an al_on_reader placement");
  if (!generator_side(placement) && s != Strategy::bald && s != Strategy::random)
    throw ValidationError("recipe.strategy", std::string(acquisition::to_string(s)) +
                                                 " scores contexts with the generator; use al_on_generator");
}

void to_json(json& j, const RecipeConfig& v) {
  j = {{"placement", to_string(v.placement)},
       {"iterations", v.iterations},
       {"batch", v.batch},
       {"strategy", acquisition::to_string(v.strategy)},
       {"filter_mode", synthesis::to_string(v.filter_mode)},
       {"seed", v.seed}};
}

void from_json(const json& j, RecipeConfig& v) {
  if (j.contains("placement")) v.placement = placement_from_string(j["placement"].get<std::string>());
  v.iterations = j.value("iterations", v.iterations);
  v.batch = j.value("batch", v.batch);
  if (j.contains("strategy")) v.strategy = acquisition::strategy_from_string(j["strategy"].get<std::string>());
  if (j.contains("filter_mode")) v.filter_mode = synthesis::filter_mode_from_string(j["filter_mode"].get<std::string>());
  v.seed = j.value("seed", v.seed);
}

void ExperimentConfig::validate() const {
  recipe.validate();
  generator_train.validate();
  layout.validate();
  decode.validate();
  reader_train.validate();
  synthesis.validate();
  ensemble.validate();
  if (workers < 1) throw ValidationError("workers", "workers must be at least 1");
}

void to_json(json& j, const ExperimentConfig& v) {
  j = {{"recipe", v.recipe},           {"generator_train", v.generator_train}, {"layout", v.layout},
       {"decode", v.decode},           {"reader_train", v.reader_train},       {"synthesis", v.synthesis},
       {"ensemble", v.ensemble},       {"workers", v.workers}};
}

void from_json(const json& j, ExperimentConfig& v) {
  if (j.contains("recipe")) j["recipe"].get_to(v.recipe);
  if (j.contains("generator_train")) j["generator_train"].get_to(v.generator_train);
  if (j.contains("layout")) j["layout"].get_to(v.layout);
  if (j.contains("decode")) j["decode"].get_to(v.decode);
  if (j.contains("reader_train")) j["reader_train"].get_to(v.reader_train);
  if (j.contains("synthesis")) j["synthesis"].get_to(v.synthesis);
  if (j.contains("ensemble")) j["ensemble"].get_to(v.ensemble);
  v.workers = j.value("workers", v.workers);
}

// ---- annotation ----

OracleAnnotator::OracleAnnotator(std::span<const corpus::QASample> gold) : gold_(gold) {}

std::vector<corpus::QASample> OracleAnnotator::annotate(const std::string&, std::span<const AnnotationRequest> requests) {
  std::unordered_map<std::string_view, std::vector<const corpus::QASample*>> by_doc;
  std::unordered_map<std::string_view, const corpus::QASample*> by_id;
  for (const auto& s : gold_) {
    by_doc[s.document_id].push_back(&s);
    by_id[s.id] = &s;
  }
  std::vector<corpus::QASample> out;
  for (const auto& r : requests) {
    std::vector<const corpus::QASample*> hits;
    if (r.is_sample) {
      auto it = by_id.find(r.candidate_id);
      if (it != by_id.end()) hits.push_back(it->second);
    } else {
      auto it = by_doc.find(r.candidate_id);
      if (it != by_doc.end()) hits = it->second;
    }
    if (hits.empty()) throw DataError("oracle has no gold label for candidate '" + r.candidate_id + "'");
    for (const auto* s : hits) {
      out.push_back(*s);
      out.back().provenance = corpus::Provenance::oracle;
    }
  }
  return out;
}

// ---- records ----

std::string_view to_string(ExperimentRecord::Status s) { return kStatusNames[static_cast<int>(s)]; }

json iteration_to_json(const IterationRecord& r) {
  return {{"iteration", r.iteration},
          {"selected", r.selected},
          {"annotations", r.annotations},
          {"base_hash", to_hex(r.base_hash)},
          {"init_hash", to_hex(r.init_hash)},
          {"trained_hash", to_hex(r.trained_hash)},
          {"training", r.training},
          {"eval_em", r.eval_em ? json(*r.eval_em) : json()},
          {"eval_f1", r.eval_f1 ? json(*r.eval_f1) : json()},
          {"flagged", r.flagged}};
}

IterationRecord iteration_from_json(const json& j) {
  IterationRecord r;
  r.iteration = j.at("iteration").get<int>();
  r.selected = j.at("selected").get<std::vector<std::string>>();
  r.annotations = j.at("annotations").get<std::size_t>();
  r.base_hash = std::stoull(j.at("base_hash").get<std::string>(), nullptr, 16);
  r.init_hash = std::stoull(j.at("init_hash").get<std::string>(), nullptr, 16);
  r.trained_hash = std::stoull(j.at("trained_hash").get<std::string>(), nullptr, 16);
  r.training = j.value("training", json());
  if (!j.at("eval_em").is_null()) r.eval_em = j["eval_em"].get<double>();
  if (!j.at("eval_f1").is_null()) r.eval_f1 = j["eval_f1"].get<double>();
  r.flagged = j.value("flagged", std::size_t{0});
  return r;
}

json ExperimentRecord::to_json(const corpus::DocumentIndex& docs) const {
  json its = json::array();
  for (const auto& it : iterations) its.push_back(iteration_to_json(it));
  return {{"status", to_string(status)},
          {"config", config},
          {"pool", pool.to_json()},
          {"iterations", its},
          {"annotated", samples_json(annotated, docs)},
          {"phases", phases},
          {"final_em", final_em ? json(*final_em) : json()},
          {"final_f1", final_f1 ? json(*final_f1) : json()}};
}

ExperimentRecord ExperimentRecord::from_json(const json& j, const corpus::DocumentIndex& docs) {
  ExperimentRecord r;
  const auto st = j.at("status").get<std::string>();
  for (int i = 0; i < 3; ++i)
    if (st == kStatusNames[i]) r.status = static_cast<Status>(i);
  j.at("config").get_to(r.config);
  r.pool = PoolState::from_json(j.at("pool"));
  for (const auto& it : j.at("iterations")) r.iterations.push_back(iteration_from_json(it));
  r.annotated = samples_from(j.at("annotated"), docs);
  r.phases = j.at("phases");
  if (!j.at("final_em").is_null()) r.final_em = j["final_em"].get<double>();
  if (!j.at("final_f1").is_null()) r.final_f1 = j["final_f1"].get<double>();
  return r;
}

// ---- sampling ----

std::vector<std::size_t> subsample_indices(std::size_t n, std::size_t k, std::uint64_t seed) {
  if (k > n) throw PreconditionError("subsample: requested " + std::to_string(k) + " of " + std::to_string(n));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(splitmix64(seed));
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::vector<corpus::QASample> subsample_pool(std::span<const corpus::QASample> pool, std::size_t k,
                                             std::uint64_t seed) {
  std::vector<corpus::QASample> out;
  for (auto i : subsample_indices(pool.size(), k, seed)) out.push_back(pool[i]);
  return out;
}

std::vector<std::string> candidate_ids(std::span<const corpus::QASample> pool, bool contexts) {
  std::set<std::string> ids;
  for (const auto& s : pool) ids.insert(contexts ? s.document_id : s.id);
  return {ids.begin(), ids.end()};
}

// ---- run_al ----

ExperimentRecord run_al(const BackendFactories& f, const Tokenizers& tok, const ExperimentData& data,
                        const ExperimentConfig& cfg, Annotator& annotator, const fs::path& dir, bool resume) {
  cfg.validate();
  const auto& recipe = cfg.recipe;
  if (is_baseline(recipe.placement)) throw ConfigError("run_al: baseline placements run through run_baseline");
  if (!data.docs || !tok.reader) throw PreconditionError("run_al: documents and reader tokenizer are required");
  const Strategy strategy = recipe.effective_strategy();
  const bool gen_side = generator_side(recipe.placement);
  if (gen_side && (!f.base_generator || !tok.generator)) throw PreconditionError("run_al: generator required");
  if (!f.base_reader) throw PreconditionError("run_al: base reader factory required");
  if (gen_side && !f.fresh_reader) throw PreconditionError("run_al: fresh reader factory required");

  Run run{f, tok, data, cfg, dir};
  fs::create_directories(dir / "scores");
  fs::create_directories(dir / "checkpoints");

  std::unordered_map<std::string, const corpus::QASample*> sample_by_id;
  for (const auto& s : data.pool) sample_by_id[s.id] = &s;

  ExperimentRecord rec;
  rec.config = cfg;
  std::optional<std::vector<std::string>> pending;  // selection awaiting labels
  int start = 1;
  if (resume && fs::exists(dir / "record.json")) {
    json cfg_now = cfg;
    if (read_json_file(dir / "config.json") != cfg_now)
      throw ConfigError("run_al: config differs from the one stored in " + dir.string());
    rec = ExperimentRecord::from_json(read_json_file(dir / "record.json"), run.docs());
    if (rec.status != ExperimentRecord::Status::suspended) {
      spdlog::info("run_al: {} already {}", dir.string(), to_string(rec.status));
      return rec;
    }
    auto state = read_json_file(dir / "state.json");
    start = state.at("completed").get<int>() + 1;
    if (!state.at("pending").is_null()) pending = state["pending"].get<std::vector<std::string>>();
    log_event(dir, {{"event", "resume"}, {"iteration", start}});
  } else {
    for (const char* stale : {"log.jsonl", "iterations.jsonl", "record.json", "state.json"}) fs::remove(dir / stale);
    write_json_file(dir / "config.json", json(cfg));
    rec.pool = PoolState::initial(candidate_ids(data.pool, gen_side));
    write_json_file(dir / "poolstate_0.json", rec.pool.to_json());
    if (recipe.iterations * recipe.batch > rec.pool.pool.size())
      spdlog::warn("run_al: budget {}x{} exceeds the {} candidates; the loop will stop when the pool empties",
                   recipe.iterations, recipe.batch, rec.pool.pool.size());
    log_event(dir, {{"event", "start"}, {"placement", to_string(recipe.placement)},
                    {"strategy", acquisition::to_string(strategy)}, {"candidates", rec.pool.pool.size()}});
  }

  // Base weights and their hashes.
  const std::uint64_t gen_base_hash = gen_side ? f.base_generator()->weights_hash() : 0;
  const std::uint64_t reader_base_hash = f.base_reader()->weights_hash();
  reader::ReaderBackendPtr scoring_reader;  // fixed base reader for rt / dsp_rt
  if (gen_side && acquisition::needs_reader(strategy)) scoring_reader = checked(f.base_reader(), "base reader");

  generator::GenerationBackendPtr current_gen;
  reader::ReaderBackendPtr current_reader;
  const int last_done = start - 1;
  if (gen_side) {
    current_gen = f.base_generator();
    if (last_done > 0 && fs::exists(dir / "checkpoints" / iter_name(last_done) / "generator"))
      current_gen->load(dir / "checkpoints" / iter_name(last_done) / "generator");
  } else {
    current_reader = checked(f.base_reader(), "base reader");
    if (last_done > 0 && fs::exists(dir / "checkpoints" / iter_name(last_done) / "reader"))
      current_reader->load(dir / "checkpoints" / iter_name(last_done) / "reader");
  }

  if (gen_side && data.dev.empty())
    throw PreconditionError("run_al: generator fine-tuning needs a non-empty dev slice");
  std::vector<generator::TrainingPair> dev_pairs;
  if (gen_side)
    for (const auto& s : data.dev) {
      auto p = generator::build_training_pairs(s, doc_of(run.docs(), s.document_id), *tok.generator, cfg.layout);
      dev_pairs.insert(dev_pairs.end(), p.begin(), p.end());
    }

  for (int k = start; k <= static_cast<int>(recipe.iterations); ++k) {
    IterationRecord it;
    it.iteration = k;
    std::vector<std::string> selected;
    if (pending) {
      selected = *pending;
      pending.reset();
    } else {
      if (rec.pool.pool.empty()) {
        spdlog::warn("run_al: pool exhausted before iteration {}; stopping", k);
        rec.status = ExperimentRecord::Status::stopped_early;
        log_event(dir, {{"event", "pool_exhausted"}, {"iteration", k}});
        break;
      }
      // Score the remaining pool with the model of the previous iteration.
      std::vector<acquisition::Candidate> cands;
      cands.reserve(rec.pool.pool.size());
      for (const auto& id : rec.pool.pool) {
        if (gen_side) {
          cands.push_back({id, doc_of(run.docs(), id).text, ""});
        } else {
          const auto* s = sample_by_id.at(id);
          cands.push_back({id, doc_of(run.docs(), s->document_id).text, s->question});
        }
      }
      acquisition::ScoringModels m;
      m.generator = current_gen.get();
      m.generator_tokenizer = tok.generator;
      m.layout = cfg.layout;
      m.reader = gen_side ? scoring_reader.get() : current_reader.get();
      m.reader_tokenizer = tok.reader;
      m.reader_cfg = cfg.reader_train;
      m.beam_size = cfg.decode.beam_size;
      m.max_answer_tokens = cfg.decode.max_answer_tokens;
      auto ens = cfg.ensemble;
      ens.base_seed = derive_seed(cfg.ensemble.base_seed ^ recipe.seed, "scores", static_cast<std::uint64_t>(k));
      auto scores = acquisition::score_pool(strategy, m, cands, ens, k, cfg.workers);
      acquisition::write_score_dump(dir / "scores" / (iter_name(k) + ".jsonl"), scores);
      it.flagged = std::count_if(scores.begin(), scores.end(), [](const auto& s) {
        return !s.flags.empty() && s.flags.front() == "decode_failed";
      });
      selected = acquisition::rank_and_select(scores, recipe.batch);
    }

    std::vector<AnnotationRequest> reqs;
    for (const auto& id : selected) {
      if (gen_side) {
        reqs.push_back({id, id, doc_of(run.docs(), id).text, false, ""});
      } else {
        const auto* s = sample_by_id.at(id);
        reqs.push_back({id, s->document_id, doc_of(run.docs(), s->document_id).text, true, s->question});
      }
    }
    std::vector<corpus::QASample> labels;
    try {
      labels = annotator.annotate(iter_name(k), reqs);
    } catch (const AnnotatorTimeout& e) {
      spdlog::warn("run_al: annotation of iteration {} timed out ({}); suspending", k, e.what());
      rec.status = ExperimentRecord::Status::suspended;
      run.persist(rec, {{"completed", k - 1}, {"pending", selected}});
      log_event(dir, {{"event", "suspend"}, {"iteration", k}, {"reason", e.what()}});
      return rec;
    }
    std::set<std::string> covered;
    for (const auto& s : labels) {
      if (!corpus::span_invariant_holds(doc_of(run.docs(), s.document_id).text, s))
        throw DataError("annotation " + s.id + " violates the span invariant");
      covered.insert(gen_side ? s.document_id : s.id);
    }
    if (covered != std::set<std::string>(selected.begin(), selected.end()))
      throw DataError("run_al: annotations do not cover exactly the requested candidates");

    rec.pool.apply_selection(k, selected, strategy);
    rec.pool.check_invariants();
    rec.annotated.insert(rec.annotated.end(), labels.begin(), labels.end());
    it.selected = selected;
    it.annotations = labels.size();

    // Re-initialize from base weights and fine-tune on everything labeled so far.
    const auto ckpt = dir / "checkpoints" / iter_name(k);
    if (gen_side) {
      auto g = f.base_generator();
      it.base_hash = gen_base_hash;
      it.init_hash = g->weights_hash();
      if (it.init_hash != it.base_hash) throw Error("run_al: re-initialized generator differs from the base weights");
      if (!rec.annotated.empty()) {
        std::vector<generator::TrainingPair> pairs;
        for (const auto& s : rec.annotated) {
          auto p = generator::build_training_pairs(s, doc_of(run.docs(), s.document_id), *tok.generator, cfg.layout);
          pairs.insert(pairs.end(), p.begin(), p.end());
        }
        auto gc = cfg.generator_train;
        gc.seed = derive_seed(recipe.seed, "generator", static_cast<std::uint64_t>(k));
        if (!pairs.empty()) {
          auto log = generator::train_generator(*g, pairs, gc, dev_pairs, generator::TrainStage::target);
          it.training = {{"initial_dev_loss", log.initial_dev_loss}, {"best_epoch", log.best_epoch},
                         {"best_dev_loss", log.best_dev_loss}, {"pairs", pairs.size()}};
        }
      }
      it.trained_hash = g->weights_hash();
      g->save(ckpt / "generator");
      current_gen = std::move(g);
    } else {
      auto r = checked(f.base_reader(), "base reader");
      it.base_hash = reader_base_hash;
      it.init_hash = r->weights_hash();
      if (it.init_hash != it.base_hash) throw Error("run_al: re-initialized reader differs from the base weights");
      if (!rec.annotated.empty()) {
        auto log = run.train_reader(*r, rec.annotated, derive_seed(recipe.seed, "reader", static_cast<std::uint64_t>(k)));
        it.training = {{"best_epoch", log.best_epoch}, {"examples", log.examples}};
        if (log.best_dev_f1) it.training["best_dev_f1"] = *log.best_dev_f1;
      }
      if (auto ev = run.evaluate(*r)) {
        it.eval_em = ev->em;
        it.eval_f1 = ev->f1;
      }
      it.trained_hash = r->weights_hash();
      r->save(ckpt / "reader");
      current_reader = std::move(r);
    }
    rec.iterations.push_back(it);
    write_json_file(dir / ("poolstate_" + std::to_string(k) + ".json"), rec.pool.to_json());
    append_jsonl(dir / "iterations.jsonl", iteration_to_json(it));
    log_event(dir, {{"event", "iteration"}, {"iteration", k}, {"selected", selected.size()},
                    {"annotations", labels.size()}, {"labeled", rec.pool.labeled.size()}});
    spdlog::info("run_al: iteration {} selected {} candidates ({} labels, {} labeled total)", k, selected.size(),
                 labels.size(), rec.pool.labeled.size());
    run.persist(rec, {{"completed", k}, {"pending", nullptr}});
  }

  if (gen_side) {
    // Final stage: synthesize with the adapted generator, filter, train a fresh reader
    // on the filtered synthetic data, then on the annotated samples.
    auto scfg = cfg.synthesis;
    scfg.filter_mode = recipe.filter_mode;
    scfg.workers = std::max(scfg.workers, cfg.workers);
    auto syn = synthesis::synthesize_corpus(*current_gen, data.unlabeled_documents, *tok.generator, scfg, cfg.layout,
                                            cfg.decode);
    json filter_phase{{"name", "synthesize"}, {"generation", syn.report.to_json()}};

    reader::ReaderBackendPtr rtcons_reader;
    synthesis::FilterContext fctx{nullptr, tok.reader, data.docs, cfg.reader_train};
    if (scfg.filter_mode == synthesis::FilterMode::rtcons || scfg.filter_mode == synthesis::FilterMode::both) {
      rtcons_reader = checked(f.base_reader(), "base reader");
      if (!rec.annotated.empty())
        run.train_reader(*rtcons_reader, rec.annotated, derive_seed(recipe.seed, "rtcons", 0));
      fctx.reader = rtcons_reader.get();
    }
    synthesis::FilterReport frep;
    auto filtered = synthesis::apply_filters(syn.samples, scfg, fctx, &frep);
    filter_phase["filter"] = frep.to_json();
    fs::create_directories(dir / "synthetic");
    synthesis::write_synthetic(dir / "synthetic" / "synthetic.jsonl", syn.samples, run.docs());
    rec.phases.push_back(filter_phase);

    auto r = checked(f.fresh_reader(), "fresh reader");
    const auto synthetic = synthesis::plain_samples(filtered);
    if (!synthetic.empty()) {
      auto log = run.train_reader(*r, synthetic, derive_seed(recipe.seed, "final-synthetic", 0));
      json ph{{"name", "train_reader_synthetic"}, {"samples", synthetic.size()},
              {"provenance", provenance_counts(synthetic)}, {"best_epoch", log.best_epoch}};
      if (log.best_dev_f1) ph["best_dev_f1"] = *log.best_dev_f1;
      if (auto ev = run.evaluate(*r)) ph["eval"] = eval_json(*ev);
      rec.phases.push_back(ph);
    } else {
      spdlog::warn("run_al: no synthetic sample survived filtering");
    }
    if (!rec.annotated.empty()) {
      auto log = run.train_reader(*r, rec.annotated, derive_seed(recipe.seed, "final-annotated", 0));
      json ph{{"name", "train_reader_annotated"}, {"samples", rec.annotated.size()},
              {"provenance", provenance_counts(rec.annotated)}, {"best_epoch", log.best_epoch}};
      if (log.best_dev_f1) ph["best_dev_f1"] = *log.best_dev_f1;
      rec.phases.push_back(ph);
    }
    r->save(dir / "checkpoints" / "final_reader");
    current_reader = std::move(r);
  }

  if (auto ev = run.evaluate(*current_reader)) {
    rec.final_em = ev->em;
    rec.final_f1 = ev->f1;
    reader::write_eval_report(*ev, dir / "eval");
  }
  if (rec.status != ExperimentRecord::Status::stopped_early) rec.status = ExperimentRecord::Status::completed;
  run.persist(rec, {{"completed", rec.iterations.empty() ? 0 : rec.iterations.back().iteration}, {"pending", nullptr}});
  log_event(dir, {{"event", "finish"}, {"status", to_string(rec.status)},
                  {"final_f1", rec.final_f1 ? json(*rec.final_f1) : json()}});
  return rec;
}

// ---- baselines ----

ExperimentRecord run_baseline(const BackendFactories& f, const Tokenizers& tok, const ExperimentData& data,
                              const ExperimentConfig& cfg, const fs::path& dir) {
  cfg.validate();
  const auto& recipe = cfg.recipe;
  if (!is_baseline(recipe.placement)) throw ConfigError("run_baseline: placement is not a baseline");
  if (!data.docs || !tok.reader) throw PreconditionError("run_baseline: documents and reader tokenizer are required");
  Run run{f, tok, data, cfg, dir};
  fs::create_directories(dir);
  write_json_file(dir / "config.json", json(cfg));

  const std::size_t k = recipe.iterations * recipe.batch;
  if (k > data.pool.size())
    throw PreconditionError("run_baseline: subset of " + std::to_string(k) + " exceeds the " +
                            std::to_string(data.pool.size()) + " available samples");
  ExperimentRecord rec;
  rec.config = cfg;
  rec.annotated = subsample_pool(data.pool, k, recipe.seed);
  for (auto& s : rec.annotated) s.provenance = corpus::Provenance::oracle;

  reader::ReaderBackendPtr r;
  if (recipe.placement == Placement::source_plus_target_baseline) {
    r = checked(f.base_reader(), "base reader");
    json ph{{"name", "source"}, {"weights_hash", to_hex(r->weights_hash())}};
    if (auto ev = run.evaluate(*r)) ph["eval"] = eval_json(*ev);
    rec.phases.push_back(ph);
  } else {
    r = checked(f.fresh_reader(), "fresh reader");
  }
  if (!rec.annotated.empty()) {
    auto log = run.train_reader(*r, rec.annotated, derive_seed(recipe.seed, "baseline", 0));
    json ph{{"name", "target"}, {"samples", rec.annotated.size()}, {"best_epoch", log.best_epoch}};
    if (log.best_dev_f1) ph["best_dev_f1"] = *log.best_dev_f1;
    rec.phases.push_back(ph);
  }
  if (auto ev = run.evaluate(*r)) {
    rec.final_em = ev->em;
    rec.final_f1 = ev->f1;
    reader::write_eval_report(*ev, dir / "eval");
  }
  r->save(dir / "checkpoints" / "final_reader");
  run.persist(rec, {{"completed", 0}, {"pending", nullptr}});
  log_event(dir, {{"event", "baseline"}, {"placement", to_string(recipe.placement)}, {"samples", k}});
  return rec;
}

}  // namespace alqa::loop
