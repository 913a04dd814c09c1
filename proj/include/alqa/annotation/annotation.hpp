#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "alqa/common/jsonl.hpp"
#include "alqa/corpus/types.hpp"
#include "alqa/loop/loop.hpp"

namespace alqa::annotation {

enum class TaskStatus { pending, claimed, submitted, accepted };

std::string_view to_string(TaskStatus s);

struct Submission {
  std::string question;
  corpus::CharSpan answer_span;  // byte offsets into the context
  std::string annotator_id;
  std::string note;
};

struct TaskSpec {
  std::string task_id;
  std::string document_id;
  std::string context;
  std::optional<std::string> seed_question;
  std::string sample_id;  // id given to the resulting QASample; defaults to task_id
};

struct AnnotationTask {
  TaskSpec spec;
  std::string batch_id;
  TaskStatus status = TaskStatus::pending;
  std::optional<std::string> claimant;
  std::int64_t created_ms = 0;
  std::int64_t updated_ms = 0;
  std::int64_t lease_expires_ms = 0;
  std::optional<Submission> submission;
};

struct BatchStatus {
  std::size_t pending = 0, claimed = 0, submitted = 0, accepted = 0;
  std::size_t total() const { return pending + claimed + submitted + accepted; }
  bool complete() const { return total() > 0 && accepted == total(); }
};

// Milliseconds since the epoch.
using Clock = std::function<std::int64_t()>;
Clock system_clock();

struct StoreOptions {
  std::int64_t lease_ms = 30 * 60 * 1000;
  std::optional<std::filesystem::path> directory;  // events.jsonl + state.json; in-memory when unset
};

// Task state machine: pending -> claimed -> submitted -> accepted, claimed -> pending on
// release or lease expiry. All mutations go through one mutex.
class AnnotationStore {
 public:
  explicit AnnotationStore(StoreOptions options = {}, Clock clock = system_clock());

  // Rejects empty batches and duplicate task ids. Re-publishing a batch with the same task
  // ids is a no-op (resumed experiments); different contents under a known id conflict.
  std::string publish_batch(const std::string& batch_id, const std::vector<TaskSpec>& tasks);

  std::vector<AnnotationTask> batch_tasks(const std::string& batch_id, std::optional<TaskStatus> only = {});
  AnnotationTask task(const std::string& task_id);

  AnnotationTask claim(const std::string& task_id, const std::string& annotator_id);
  AnnotationTask release(const std::string& task_id, const std::string& annotator_id);
  // Validates the span against the context; on failure the task stays claimed.
  corpus::QASample submit_label(const std::string& task_id, const Submission& sub);
  AnnotationTask accept(const std::string& task_id);
  std::size_t accept_submitted(const std::string& batch_id);

  BatchStatus batch_status(const std::string& batch_id);
  std::vector<std::string> batch_ids();
  // Labels of accepted tasks, in publication order.
  std::vector<corpus::QASample> accepted_samples(const std::string& batch_id);

  std::int64_t lease_ms() const { return options_.lease_ms; }

 private:
  struct Batch {
    std::vector<std::string> task_ids;
  };

  AnnotationTask& find_locked(const std::string& task_id);
  const Batch& batch_locked(const std::string& batch_id) const;
  void expire_locked(std::int64_t now);
  corpus::QASample sample_of(const AnnotationTask& t) const;
  void record_locked(json event);
  void save_locked() const;
  void load();

  StoreOptions options_;
  Clock clock_;
  std::mutex mu_;
  std::map<std::string, AnnotationTask> tasks_;
  std::map<std::string, Batch> batches_;
  std::vector<std::string> batch_order_;
};

json task_to_json(const AnnotationTask& t);  // spans as code point offsets
json status_to_json(const BatchStatus& s);

// HTTP front end: the five /api routes plus task release.
class AnnotationServer {
 public:
  explicit AnnotationServer(AnnotationStore& store);
  ~AnnotationServer();
  AnnotationServer(const AnnotationServer&) = delete;
  AnnotationServer& operator=(const AnnotationServer&) = delete;

  // Binds to `port` (0 picks a free one) and returns the bound port.
  int bind(const std::string& host, int port = 0);
  void listen();  // blocks until stop()
  void stop();
  bool running() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Live annotator: publishes each request batch and blocks until every task is submitted,
// accepting submissions as they arrive. Throws loop::AnnotatorTimeout past the deadline.
class LiveAnnotator : public loop::Annotator {
 public:
  struct Options {
    std::string batch_prefix;  // namespaces batch ids per experiment
    std::chrono::milliseconds poll{500};
    std::chrono::milliseconds timeout{std::chrono::hours(24)};
  };
  LiveAnnotator(AnnotationStore& store, Options options);

  std::vector<corpus::QASample> annotate(const std::string& batch_id,
                                         std::span<const loop::AnnotationRequest> requests) override;

 private:
  AnnotationStore& store_;
  Options options_;
};

}  // namespace alqa::annotation
