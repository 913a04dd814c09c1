#include <atomic>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "alqa/annotation/annotation.hpp"
#include "alqa/common/error.hpp"
#include "alqa/common/utf8.hpp"

namespace alqa::annotation {

namespace {

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void reply_error(httplib::Response& res, int status, std::string code, const std::string& message,
                 std::optional<std::string> field = {}) {
  reply(res, status, {{"code", std::move(code)}, {"message", message}, {"field", field ? json(*field) : json()}});
}

// Runs `fn` and maps framework errors onto HTTP statuses with {code, message, field} bodies.
template <class Fn>
void guarded(httplib::Response& res, Fn&& fn) {
  try {
    fn();
  } catch (const ValidationError& e) {
    reply_error(res, 422, "validation_error", e.what(), e.field());
  } catch (const NotFoundError& e) {
    reply_error(res, 404, "not_found", e.what());
  } catch (const ConflictError& e) {
    reply_error(res, 409, "conflict", e.what());
  } catch (const json::exception& e) {
    reply_error(res, 400, "bad_request", std::string("malformed JSON: ") + e.what());
  } catch (const std::exception& e) {
    reply_error(res, 500, "internal", e.what());
  }
}

std::string annotator_of(const httplib::Request& req, const json* body = nullptr) {
  std::string id = req.get_header_value("X-Annotator-Id");
  if (id.empty() && body && body->contains("annotator_id")) id = (*body)["annotator_id"].get<std::string>();
  if (id.empty()) throw ValidationError("X-Annotator-Id", "annotator id header is required");
  return id;
}

// Span given as {"start", "end"} or [start, end] in code points.
std::pair<long long, long long> span_of(const json& body) {
  if (!body.contains("answer_char_span")) throw ValidationError("answer_char_span", "answer_char_span is required");
  const auto& s = body["answer_char_span"];
  if (s.is_array() && s.size() == 2) return {s[0].get<long long>(), s[1].get<long long>()};
  if (s.is_object() && s.contains("start") && s.contains("end")) return {s["start"].get<long long>(), s["end"].get<long long>()};
  throw ValidationError("answer_char_span", "answer_char_span must be {start, end} or [start, end]");
}

}  // namespace

struct AnnotationServer::Impl {
  AnnotationStore& store;
  httplib::Server server;
  std::atomic<bool> running{false};
  explicit Impl(AnnotationStore& s) : store(s) {}
};

AnnotationServer::AnnotationServer(AnnotationStore& store) : impl_(std::make_unique<Impl>(store)) {
  auto& srv = impl_->server;
  auto& store_ = impl_->store;
  srv.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                           {"Access-Control-Allow-Headers", "Content-Type, X-Annotator-Id"},
                           {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
  srv.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  srv.Get("/api/health", [](const httplib::Request&, httplib::Response& res) { reply(res, 200, {{"status", "ok"}}); });

  srv.Get(R"(/api/batches/([^/]+)/queries)", [&store_](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      std::optional<TaskStatus> only;
      if (req.has_param("status")) {
        const auto s = req.get_param_value("status");
        bool known = false;
        for (auto st : {TaskStatus::pending, TaskStatus::claimed, TaskStatus::submitted, TaskStatus::accepted})
          if (s == to_string(st)) only = st, known = true;
        if (!known) throw ValidationError("status", "unknown status filter '" + s + "'");
      }
      const std::string batch = req.matches[1];
      json tasks = json::array();
      for (const auto& t : store_.batch_tasks(batch, only)) tasks.push_back(task_to_json(t));
      reply(res, 200, {{"batch_id", batch}, {"tasks", tasks}});
    });
  });

  srv.Get(R"(/api/batches/([^/]+)/status)", [&store_](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      auto j = status_to_json(store_.batch_status(req.matches[1]));
      j["batch_id"] = std::string(req.matches[1]);
      reply(res, 200, j);
    });
  });

  srv.Get(R"(/api/tasks/([^/]+))", [&store_](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { reply(res, 200, task_to_json(store_.task(req.matches[1]))); });
  });

  srv.Post(R"(/api/tasks/([^/]+)/claim)", [&store_](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { reply(res, 200, task_to_json(store_.claim(req.matches[1], annotator_of(req)))); });
  });

  srv.Post(R"(/api/tasks/([^/]+)/release)", [&store_](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { reply(res, 200, task_to_json(store_.release(req.matches[1], annotator_of(req)))); });
  });

  srv.Post(R"(/api/tasks/([^/]+)/label)", [&store_](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const json body = json::parse(req.body);
      if (!body.is_object()) throw ValidationError("body", "label body must be a JSON object");
      const std::string task_id = req.matches[1];
      const auto task = store_.task(task_id);

      Submission sub;
      sub.annotator_id = annotator_of(req, &body);
      sub.question = body.value("question", "");
      sub.note = body.value("note", "");
      auto [cs, ce] = span_of(body);
      if (ce < cs) throw ValidationError("answer_char_span", "span end precedes its start");
      if (cs < 0) throw ValidationError("answer_char_span", "span start is negative");
      const auto& ctx = task.spec.context;
      const auto bs = utf8::byte_offset(ctx, static_cast<std::size_t>(cs));
      const auto be = utf8::byte_offset(ctx, static_cast<std::size_t>(ce));
      if (bs == std::string::npos || be == std::string::npos)
        throw ValidationError("answer_char_span", "span exceeds the context");
      sub.answer_span = {bs, be};
      auto sample = store_.submit_label(task_id, sub);
      json sj{{"id", sample.id},
              {"document_id", sample.document_id},
              {"question", sample.question},
              {"answer_text", sample.answer_text},
              {"answer_start", cs},
              {"answer_end", ce},
              {"provenance", corpus::to_string(sample.provenance)}};
      reply(res, 200, {{"sample", sj}, {"task", task_to_json(store_.task(task_id))}});
    });
  });

  srv.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      reply_error(res, 500, "internal", e.what());
    }
  });
}

AnnotationServer::~AnnotationServer() { stop(); }

int AnnotationServer::bind(const std::string& host, int port) {
  int bound = port == 0 ? impl_->server.bind_to_any_port(host) : (impl_->server.bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw Error("annotation server: cannot bind " + host + ":" + std::to_string(port));
  return bound;
}

void AnnotationServer::listen() {
  impl_->running = true;
  spdlog::info("annotation server: listening");
  impl_->server.listen_after_bind();
  impl_->running = false;
}

void AnnotationServer::stop() {
  if (impl_ && impl_->server.is_running()) impl_->server.stop();
}

bool AnnotationServer::running() const { return impl_->server.is_running(); }

}  // namespace alqa::annotation
