#include <algorithm>
#include <set>
#include <thread>

#include <spdlog/spdlog.h>

#include "alqa/annotation/annotation.hpp"
#include "alqa/common/error.hpp"
#include "alqa/common/utf8.hpp"

namespace alqa::annotation {

namespace {

const char* kStatusNames[] = {"pending", "claimed", "submitted", "accepted"};

TaskStatus status_from_string(const std::string& s) {
  for (int i = 0; i < 4; ++i)
    if (s == kStatusNames[i]) return static_cast<TaskStatus>(i);
  throw DataError("unknown task status '" + s + "'");
}

json span_json(std::string_view text, const corpus::CharSpan& s) {
  return {{"start", utf8::codepoint_offset(text, s.start)}, {"end", utf8::codepoint_offset(text, s.end)}};
}

AnnotationTask task_from_json(const json& j) {
  AnnotationTask t;
  t.spec.task_id = j.at("task_id").get<std::string>();
  t.spec.document_id = j.at("document_id").get<std::string>();
  t.spec.context = j.at("context").get<std::string>();
  if (!j.at("seed_question").is_null()) t.spec.seed_question = j["seed_question"].get<std::string>();
  t.spec.sample_id = j.at("sample_id").get<std::string>();
  t.batch_id = j.at("batch_id").get<std::string>();
  t.status = status_from_string(j.at("status").get<std::string>());
  if (!j.at("claimant").is_null()) t.claimant = j["claimant"].get<std::string>();
  t.created_ms = j.at("created_ms").get<std::int64_t>();
  t.updated_ms = j.at("updated_ms").get<std::int64_t>();
  t.lease_expires_ms = j.at("lease_expires_ms").get<std::int64_t>();
  if (j.contains("submission") && !j["submission"].is_null()) {
    const auto& s = j["submission"];
    Submission sub;
    sub.question = s.at("question").get<std::string>();
    sub.answer_span = {utf8::byte_offset(t.spec.context, s.at("answer_char_span").at("start").get<std::size_t>()),
                       utf8::byte_offset(t.spec.context, s.at("answer_char_span").at("end").get<std::size_t>())};
    sub.annotator_id = s.at("annotator_id").get<std::string>();
    sub.note = s.value("note", "");
    t.submission = sub;
  }
  return t;
}

}  // namespace

std::string_view to_string(TaskStatus s) { return kStatusNames[static_cast<int>(s)]; }

Clock system_clock() {
  return [] {
    return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
        .count();
  };
}

json task_to_json(const AnnotationTask& t) {
  json j{{"task_id", t.spec.task_id},
         {"batch_id", t.batch_id},
         {"document_id", t.spec.document_id},
         {"context", t.spec.context},
         {"seed_question", t.spec.seed_question ? json(*t.spec.seed_question) : json()},
         {"sample_id", t.spec.sample_id},
         {"status", to_string(t.status)},
         {"claimant", t.claimant ? json(*t.claimant) : json()},
         {"created_ms", t.created_ms},
         {"updated_ms", t.updated_ms},
         {"lease_expires_ms", t.lease_expires_ms},
         {"submission", nullptr}};
  if (t.submission)
    j["submission"] = {{"question", t.submission->question},
                       {"answer_char_span", span_json(t.spec.context, t.submission->answer_span)},
                       {"annotator_id", t.submission->annotator_id},
                       {"note", t.submission->note}};
  return j;
}

json status_to_json(const BatchStatus& s) {
  return {{"pending", s.pending}, {"claimed", s.claimed}, {"submitted", s.submitted},
          {"accepted", s.accepted}, {"total", s.total()}, {"complete", s.complete()}};
}

AnnotationStore::AnnotationStore(StoreOptions options, Clock clock)
    : options_(std::move(options)), clock_(std::move(clock)) {
  if (options_.lease_ms <= 0) throw ConfigError("annotation lease must be positive");
  if (options_.directory) {
    std::filesystem::create_directories(*options_.directory);
    load();
  }
}

void AnnotationStore::load() {
  const auto path = *options_.directory / "state.json";
  if (!std::filesystem::exists(path)) return;
  auto j = read_json_file(path);
  for (const auto& t : j.at("tasks")) {
    auto task = task_from_json(t);
    tasks_[task.spec.task_id] = task;
  }
  for (const auto& b : j.at("batches")) {
    const auto id = b.at("batch_id").get<std::string>();
    batches_[id].task_ids = b.at("task_ids").get<std::vector<std::string>>();
    batch_order_.push_back(id);
  }
  spdlog::info("annotation store: loaded {} batches, {} tasks", batches_.size(), tasks_.size());
}

void AnnotationStore::save_locked() const {
  if (!options_.directory) return;
  json tasks = json::array(), batches = json::array();
  for (const auto& id : batch_order_) {
    const auto& b = batches_.at(id);
    batches.push_back({{"batch_id", id}, {"task_ids", b.task_ids}});
    for (const auto& t : b.task_ids) tasks.push_back(task_to_json(tasks_.at(t)));
  }
  const auto tmp = *options_.directory / "state.json.tmp";
  write_json_file(tmp, {{"tasks", tasks}, {"batches", batches}});
  std::filesystem::rename(tmp, *options_.directory / "state.json");
}

void AnnotationStore::record_locked(json event) {
  event["ts_ms"] = clock_();
  if (options_.directory) append_jsonl(*options_.directory / "events.jsonl", event);
  save_locked();
}

AnnotationTask& AnnotationStore::find_locked(const std::string& task_id) {
  auto it = tasks_.find(task_id);
  if (it == tasks_.end()) throw NotFoundError("unknown task '" + task_id + "'");
  return it->second;
}

const AnnotationStore::Batch& AnnotationStore::batch_locked(const std::string& batch_id) const {
  auto it = batches_.find(batch_id);
  if (it == batches_.end()) throw NotFoundError("unknown batch '" + batch_id + "'");
  return it->second;
}

void AnnotationStore::expire_locked(std::int64_t now) {
  for (auto& [id, t] : tasks_) {
    if (t.status != TaskStatus::claimed || t.lease_expires_ms > now) continue;
    const std::string who = t.claimant.value_or("");
    t.status = TaskStatus::pending;
    t.claimant.reset();
    t.updated_ms = now;
    record_locked({{"event", "lease_expired"}, {"task_id", id}, {"annotator_id", who}});
  }
}

std::string AnnotationStore::publish_batch(const std::string& batch_id, const std::vector<TaskSpec>& tasks) {
  std::lock_guard lock(mu_);
  if (batch_id.empty()) throw ValidationError("batch_id", "batch id must not be empty");
  if (tasks.empty()) throw ValidationError("tasks", "batch '" + batch_id + "' has no tasks");
  std::vector<std::string> ids;
  std::set<std::string> seen;
  for (const auto& t : tasks) {
    if (t.task_id.empty()) throw ValidationError("task_id", "task id must not be empty");
    if (!seen.insert(t.task_id).second) throw ConflictError("duplicate task id '" + t.task_id + "' in batch");
    ids.push_back(t.task_id);
  }
  if (auto it = batches_.find(batch_id); it != batches_.end()) {
    if (it->second.task_ids == ids) return batch_id;
    throw ConflictError("batch '" + batch_id + "' already exists with different tasks");
  }
  for (const auto& id : ids)
    if (tasks_.count(id)) throw ConflictError("task id '" + id + "' already published");

  const auto now = clock_();
  for (const auto& spec : tasks) {
    AnnotationTask t;
    t.spec = spec;
    if (t.spec.sample_id.empty()) t.spec.sample_id = spec.task_id;
    t.batch_id = batch_id;
    t.created_ms = t.updated_ms = now;
    tasks_[spec.task_id] = std::move(t);
  }
  batches_[batch_id].task_ids = ids;
  batch_order_.push_back(batch_id);
  record_locked({{"event", "publish"}, {"batch_id", batch_id}, {"tasks", ids.size()}});
  return batch_id;
}

std::vector<AnnotationTask> AnnotationStore::batch_tasks(const std::string& batch_id, std::optional<TaskStatus> only) {
  std::lock_guard lock(mu_);
  expire_locked(clock_());
  std::vector<AnnotationTask> out;
  for (const auto& id : batch_locked(batch_id).task_ids) {
    const auto& t = tasks_.at(id);
    if (!only || t.status == *only) out.push_back(t);
  }
  return out;
}

AnnotationTask AnnotationStore::task(const std::string& task_id) {
  std::lock_guard lock(mu_);
  expire_locked(clock_());
  return find_locked(task_id);
}

AnnotationTask AnnotationStore::claim(const std::string& task_id, const std::string& annotator_id) {
  std::lock_guard lock(mu_);
  if (annotator_id.empty()) throw ValidationError("annotator_id", "annotator id is required");
  const auto now = clock_();
  expire_locked(now);
  auto& t = find_locked(task_id);
  if (t.status == TaskStatus::claimed && t.claimant != annotator_id)
    throw ConflictError("task '" + task_id + "' is claimed by another annotator");
  if (t.status == TaskStatus::submitted || t.status == TaskStatus::accepted)
    throw ConflictError("task '" + task_id + "' is already " + std::string(to_string(t.status)));
  const bool renew = t.status == TaskStatus::claimed;
  t.status = TaskStatus::claimed;
  t.claimant = annotator_id;
  t.lease_expires_ms = now + options_.lease_ms;
  t.updated_ms = now;
  record_locked({{"event", renew ? "renew" : "claim"}, {"task_id", task_id}, {"annotator_id", annotator_id}});
  return t;
}

AnnotationTask AnnotationStore::release(const std::string& task_id, const std::string& annotator_id) {
  std::lock_guard lock(mu_);
  const auto now = clock_();
  expire_locked(now);
  auto& t = find_locked(task_id);
  if (t.status != TaskStatus::claimed || t.claimant != annotator_id)
    throw ConflictError("task '" + task_id + "' is not claimed by '" + annotator_id + "'");
  t.status = TaskStatus::pending;
  t.claimant.reset();
  t.updated_ms = now;
  record_locked({{"event", "release"}, {"task_id", task_id}, {"annotator_id", annotator_id}});
  return t;
}

corpus::QASample AnnotationStore::sample_of(const AnnotationTask& t) const {
  corpus::QASample s;
  s.id = t.spec.sample_id;
  s.document_id = t.spec.document_id;
  s.question = t.submission->question;
  s.answer_span = t.submission->answer_span;
  s.answer_text = t.spec.context.substr(s.answer_span.start, s.answer_span.length());
  s.provenance = corpus::Provenance::human;
  return s;
}

corpus::QASample AnnotationStore::submit_label(const std::string& task_id, const Submission& sub) {
  std::lock_guard lock(mu_);
  const auto now = clock_();
  expire_locked(now);
  auto& t = find_locked(task_id);
  const bool resubmit = t.status == TaskStatus::submitted;
  if (t.status == TaskStatus::accepted) throw ConflictError("task '" + task_id + "' is already accepted");
  if (t.status == TaskStatus::pending) throw ConflictError("task '" + task_id + "' must be claimed before labeling");
  const auto& owner = resubmit ? t.submission->annotator_id : *t.claimant;
  if (owner != sub.annotator_id) throw ConflictError("task '" + task_id + "' belongs to another annotator");

  bool blank = std::all_of(sub.question.begin(), sub.question.end(), [](unsigned char c) { return std::isspace(c); });
  if (blank) throw ValidationError("question", "question must not be empty");
  const auto& span = sub.answer_span;
  if (span.end < span.start) throw ValidationError("answer_char_span", "span end precedes its start");
  if (span.end == span.start) throw ValidationError("answer_char_span", "span is empty");
  if (span.end > t.spec.context.size()) throw ValidationError("answer_char_span", "span exceeds the context");

  std::optional<Submission> previous = t.submission;
  t.submission = sub;
  auto sample = sample_of(t);
  if (!corpus::span_invariant_holds(t.spec.context, sample)) {
    t.submission = previous;
    throw ValidationError("answer_char_span", "span does not slice the context");
  }
  t.status = TaskStatus::submitted;
  t.updated_ms = now;
  json ev{{"event", resubmit ? "resubmit" : "submit"}, {"task_id", task_id}, {"annotator_id", sub.annotator_id},
          {"question", sub.question}, {"answer_char_span", span_json(t.spec.context, span)}, {"note", sub.note}};
  if (resubmit)
    ev["replaced"] = {{"question", previous->question},
                      {"answer_char_span", span_json(t.spec.context, previous->answer_span)}};
  record_locked(ev);
  return sample;
}

AnnotationTask AnnotationStore::accept(const std::string& task_id) {
  std::lock_guard lock(mu_);
  auto& t = find_locked(task_id);
  if (t.status != TaskStatus::submitted) throw ConflictError("task '" + task_id + "' has no submission to accept");
  t.status = TaskStatus::accepted;
  t.updated_ms = clock_();
  record_locked({{"event", "accept"}, {"task_id", task_id}});
  return t;
}

std::size_t AnnotationStore::accept_submitted(const std::string& batch_id) {
  std::lock_guard lock(mu_);
  std::size_t n = 0;
  for (const auto& id : batch_locked(batch_id).task_ids) {
    auto& t = tasks_.at(id);
    if (t.status != TaskStatus::submitted) continue;
    t.status = TaskStatus::accepted;
    t.updated_ms = clock_();
    record_locked({{"event", "accept"}, {"task_id", id}});
    ++n;
  }
  return n;
}

BatchStatus AnnotationStore::batch_status(const std::string& batch_id) {
  std::lock_guard lock(mu_);
  expire_locked(clock_());
  BatchStatus s;
  for (const auto& id : batch_locked(batch_id).task_ids) {
    switch (tasks_.at(id).status) {
      case TaskStatus::pending: ++s.pending; break;
      case TaskStatus::claimed: ++s.claimed; break;
      case TaskStatus::submitted: ++s.submitted; break;
      case TaskStatus::accepted: ++s.accepted; break;
    }
  }
  return s;
}

std::vector<std::string> AnnotationStore::batch_ids() {
  std::lock_guard lock(mu_);
  return batch_order_;
}

std::vector<corpus::QASample> AnnotationStore::accepted_samples(const std::string& batch_id) {
  std::lock_guard lock(mu_);
  std::vector<corpus::QASample> out;
  for (const auto& id : batch_locked(batch_id).task_ids) {
    const auto& t = tasks_.at(id);
    if (t.status == TaskStatus::accepted) out.push_back(sample_of(t));
  }
  return out;
}

// ---- live annotator ----

LiveAnnotator::LiveAnnotator(AnnotationStore& store, Options options) : store_(store), options_(std::move(options)) {}

std::vector<corpus::QASample> LiveAnnotator::annotate(const std::string& batch_id,
                                                      std::span<const loop::AnnotationRequest> requests) {
  const std::string batch = options_.batch_prefix + batch_id;
  std::vector<TaskSpec> specs;
  for (const auto& r : requests) {
    TaskSpec s;
    s.task_id = batch + "." + r.candidate_id;
    s.document_id = r.document_id;
    s.context = std::string(r.context);
    if (r.is_sample) {
      s.seed_question = r.question;
      s.sample_id = r.candidate_id;
    } else {
      s.sample_id = "human-" + s.task_id;
    }
    specs.push_back(std::move(s));
  }
  if (specs.empty()) return {};
  store_.publish_batch(batch, specs);
  spdlog::info("live annotator: waiting for batch {} ({} tasks)", batch, specs.size());
  const auto deadline = std::chrono::steady_clock::now() + options_.timeout;
  for (;;) {
    store_.accept_submitted(batch);
    if (store_.batch_status(batch).complete()) return store_.accepted_samples(batch);
    if (std::chrono::steady_clock::now() >= deadline)
      throw loop::AnnotatorTimeout("batch '" + batch + "' incomplete at the deadline");
    std::this_thread::sleep_for(options_.poll);
  }
}

}  // namespace alqa::annotation
