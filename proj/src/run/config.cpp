#include "alqa/run/config.hpp"

#include <cstdlib>
#include <functional>
#include <sstream>

#include "alqa/common/error.hpp"
#include "alqa/common/hash.hpp"

extern char** environ;

namespace alqa::run {

namespace fs = std::filesystem;

namespace {

json opt_path(const std::optional<fs::path>& p) { return p ? json(p->string()) : json(); }

class Collector {
 public:
  void add(const std::string& path, const std::string& msg) { errors_.push_back(path + ": " + msg); }
  void add_raw(std::string line) { errors_.push_back(std::move(line)); }

  // Runs `f`, recording any failure under `path`.
  void guard(const std::string& path, const std::function<void()>& f) {
    try {
      f();
    } catch (const ValidationError& e) {
      add(e.field().empty() ? path : (e.field().rfind(path, 0) == 0 ? e.field() : path + "." + e.field()), e.what());
    } catch (const json::exception& e) {
      add(path, e.what());
    } catch (const std::exception& e) {
      add(path, e.what());
    }
  }

  void raise_if_any() const {
    if (errors_.empty()) return;
    std::ostringstream os;
    os << "invalid run config (" << errors_.size() << (errors_.size() == 1 ? " error" : " errors") << ")";
    for (const auto& e : errors_) os << "\n  " << e;
    throw ConfigError(os.str());
  }

 private:
  std::vector<std::string> errors_;
};

std::optional<fs::path> read_path(const json& parent, const char* key, const fs::path& base) {
  if (!parent.contains(key) || parent[key].is_null()) return std::nullopt;
  fs::path p = parent[key].get<std::string>();
  return p.is_absolute() ? p : base / p;
}

}  // namespace

Environment process_environment() {
  Environment env;
  for (char** e = environ; e && *e; ++e) {
    std::string_view kv(*e);
    if (kv.rfind("ALQA_", 0) != 0) continue;
    const auto eq = kv.find('=');
    if (eq == std::string_view::npos) continue;
    env.emplace(std::string(kv.substr(0, eq)), std::string(kv.substr(eq + 1)));
  }
  return env;
}

std::uint64_t module_seed(std::uint64_t run_seed, const std::string& module) {
  return derive_seed(run_seed, module, 0);
}

json run_config_to_json(const RunConfig& c) {
  const auto& x = c.experiment;
  return {{"output_dir", c.output_dir.string()},
          {"seed", c.seed},
          {"workers", x.workers},
          {"data",
           {{"source", opt_path(c.data.source)},
            {"target_pool", opt_path(c.data.target_pool)},
            {"target_dev", opt_path(c.data.target_dev)},
            {"target_eval", opt_path(c.data.target_eval)},
            {"unlabeled", opt_path(c.data.unlabeled)}}},
          {"tokenizers", {{"generator", opt_path(c.generator_tokenizer)}, {"reader", opt_path(c.reader_tokenizer)}}},
          {"backends",
           {{"generator", {{"id", c.generator.id}, {"options", c.generator.options}}},
            {"reader", {{"id", c.reader.id}, {"options", c.reader.options}}}}},
          {"checkpoints",
           {{"generator", opt_path(c.generator_checkpoint)},
            {"reader", opt_path(c.reader_checkpoint)},
            {"synthetic_reader", opt_path(c.synthetic_reader_checkpoint)}}},
          {"recipe", x.recipe},
          {"generator_train", x.generator_train},
          {"layout", x.layout},
          {"decode", x.decode},
          {"reader_train", x.reader_train},
          {"synthesis", x.synthesis},
          {"ensemble", x.ensemble},
          {"annotation",
           {{"mode", c.annotation.mode},
            {"host", c.annotation.host},
            {"port", c.annotation.port},
            {"lease_minutes", c.annotation.lease_minutes},
            {"poll_ms", c.annotation.poll_ms},
            {"timeout_s", c.annotation.timeout_s},
            {"store_dir", opt_path(c.annotation.store_dir)}}}};
}

std::vector<std::string> unknown_keys(const json& j, const json& schema, const std::string& prefix) {
  std::vector<std::string> out;
  if (!j.is_object() || !schema.is_object() || schema.empty()) return out;
  for (const auto& [k, v] : j.items()) {
    const std::string path = prefix.empty() ? k : prefix + "." + k;
    if (!schema.contains(k)) {
      out.push_back(path);
      continue;
    }
    const auto& s = schema[k];
    if (s.is_object() && !s.empty()) {
      auto sub = unknown_keys(v, s, path);
      out.insert(out.end(), sub.begin(), sub.end());
    }
  }
  return out;
}

std::vector<std::string> type_mismatches(const json& j, const json& schema, const std::string& prefix) {
  std::vector<std::string> out;
  if (!j.is_object() || !schema.is_object() || schema.empty()) return out;
  for (const auto& [k, v] : j.items()) {
    if (!schema.contains(k)) continue;
    const auto& s = schema[k];
    const std::string path = prefix.empty() ? k : prefix + "." + k;
    if (s.is_null() || v.is_null()) continue;  // optional values
    const bool ok = (s.is_number() && v.is_number()) || (s.is_string() && v.is_string()) ||
                    (s.is_boolean() && v.is_boolean()) || (s.is_object() && v.is_object()) ||
                    (s.is_array() && v.is_array());
    if (!ok) {
      out.push_back(path + ": expected " + std::string(s.type_name()) + ", got " + v.type_name());
      continue;
    }
    if (s.is_number_integer() && !v.is_number_integer()) {
      out.push_back(path + ": expected an integer");
      continue;
    }
    if (s.is_number_unsigned() && v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0) {
      out.push_back(path + ": must not be negative");
      continue;
    }
    auto sub = type_mismatches(v, s, path);
    out.insert(out.end(), sub.begin(), sub.end());
  }
  return out;
}

RunConfig parse_run_config(const json& j, const fs::path& base_dir, const Environment& env) {
  if (!j.is_object()) throw ConfigError("invalid run config: top level must be an object");
  Collector errs;
  const auto schema = run_config_to_json(RunConfig{});
  for (const auto& k : unknown_keys(j, schema)) errs.add(k, "unknown key");
  for (const auto& e : type_mismatches(j, schema, "")) errs.add_raw(e);
  errs.raise_if_any();

  RunConfig c;
  auto env_get = [&](const char* k) -> std::optional<std::string> {
    auto it = env.find(k);
    if (it == env.end() || it->second.empty()) return std::nullopt;
    return it->second;
  };
  const fs::path data_base = env_get("ALQA_DATA_DIR") ? fs::path(*env_get("ALQA_DATA_DIR")) : base_dir;

  errs.guard("output_dir", [&] {
    if (j.contains("output_dir")) {
      fs::path p = j["output_dir"].get<std::string>();
      c.output_dir = p.is_absolute() ? p : base_dir / p;
    } else {
      c.output_dir = base_dir / c.output_dir;
    }
  });
  errs.guard("seed", [&] { c.seed = j.value("seed", c.seed); });
  errs.guard("workers", [&] { c.experiment.workers = j.value("workers", c.experiment.workers); });

  const json empty = json::object();
  auto section = [&](const char* name) -> const json& {
    if (!j.contains(name)) return empty;
    if (!j[name].is_object()) {
      errs.add(name, "must be an object");
      return empty;
    }
    return j[name];
  };

  const auto& data = section("data");
  errs.guard("data", [&] {
    c.data.source = read_path(data, "source", data_base);
    c.data.target_pool = read_path(data, "target_pool", data_base);
    c.data.target_dev = read_path(data, "target_dev", data_base);
    c.data.target_eval = read_path(data, "target_eval", data_base);
    c.data.unlabeled = read_path(data, "unlabeled", data_base);
  });
  const auto& tok = section("tokenizers");
  errs.guard("tokenizers", [&] {
    c.generator_tokenizer = read_path(tok, "generator", data_base);
    c.reader_tokenizer = read_path(tok, "reader", data_base);
  });
  const auto& ck = section("checkpoints");
  errs.guard("checkpoints", [&] {
    c.generator_checkpoint = read_path(ck, "generator", data_base);
    c.reader_checkpoint = read_path(ck, "reader", data_base);
    c.synthetic_reader_checkpoint = read_path(ck, "synthetic_reader", data_base);
  });
  const auto& be = section("backends");
  for (auto [name, spec] : {std::pair{"generator", &c.generator}, std::pair{"reader", &c.reader}}) {
    errs.guard(std::string("backends.") + name, [&, name = name, spec = spec] {
      if (!be.contains(name)) return;
      spec->id = be[name].value("id", spec->id);
      if (be[name].contains("options")) {
        if (!be[name]["options"].is_object()) throw ValidationError("options", "must be an object");
        spec->options = be[name]["options"];
      }
    });
  }

  // Env seed first so that derived module seeds follow it.
  if (auto s = env_get("ALQA_SEED")) errs.guard("ALQA_SEED", [&] { c.seed = std::stoull(*s); });
  if (auto w = env_get("ALQA_WORKERS")) errs.guard("ALQA_WORKERS", [&] { c.experiment.workers = std::stoul(*w); });
  if (auto o = env_get("ALQA_OUTPUT_DIR")) c.output_dir = fs::absolute(*o);

  auto& x = c.experiment;
  x.generator_train.seed = module_seed(c.seed, "generator_train");
  x.reader_train.seed = module_seed(c.seed, "reader_train");
  x.synthesis.seed = module_seed(c.seed, "synthesis");
  x.recipe.seed = module_seed(c.seed, "recipe");
  x.ensemble.base_seed = module_seed(c.seed, "ensemble");
  errs.guard("recipe", [&] { section("recipe").get_to(x.recipe); });
  errs.guard("generator_train", [&] { section("generator_train").get_to(x.generator_train); });
  errs.guard("layout", [&] { section("layout").get_to(x.layout); });
  errs.guard("decode", [&] { section("decode").get_to(x.decode); });
  errs.guard("reader_train", [&] { section("reader_train").get_to(x.reader_train); });
  errs.guard("synthesis", [&] { section("synthesis").get_to(x.synthesis); });
  errs.guard("ensemble", [&] { section("ensemble").get_to(x.ensemble); });
  x.synthesis.workers = x.workers;

  const auto& an = section("annotation");
  errs.guard("annotation", [&] {
    auto& a = c.annotation;
    a.mode = an.value("mode", a.mode);
    a.host = an.value("host", a.host);
    a.port = an.value("port", a.port);
    a.lease_minutes = an.value("lease_minutes", a.lease_minutes);
    a.poll_ms = an.value("poll_ms", a.poll_ms);
    a.timeout_s = an.value("timeout_s", a.timeout_s);
    if (an.contains("store_dir") && !an["store_dir"].is_null()) {
      fs::path p = an["store_dir"].get<std::string>();
      a.store_dir = p.is_absolute() ? p : base_dir / p;
    }
    if (a.mode != "oracle" && a.mode != "live") throw ValidationError("mode", "must be 'oracle' or 'live'");
    if (a.port < 0 || a.port > 65535) throw ValidationError("port", "must be in [0, 65535]");
    if (a.lease_minutes <= 0) throw ValidationError("lease_minutes", "must be positive");
    if (a.poll_ms <= 0) throw ValidationError("poll_ms", "must be positive");
    if (a.timeout_s <= 0) throw ValidationError("timeout_s", "must be positive");
  });

  errs.guard("recipe", [&] { x.recipe.validate(); });
  errs.guard("generator_train", [&] { x.generator_train.validate(); });
  errs.guard("layout", [&] { x.layout.validate(); });
  errs.guard("decode", [&] { x.decode.validate(); });
  errs.guard("reader_train", [&] { x.reader_train.validate(); });
  errs.guard("synthesis", [&] { x.synthesis.validate(); });
  errs.guard("ensemble", [&] { x.ensemble.validate(); });
  errs.guard("workers", [&] {
    if (x.workers == 0) throw ValidationError("workers", "must be at least 1");
  });
  errs.raise_if_any();
  return c;
}

RunConfig load_run_config(const fs::path& path, const Environment& env) {
  json j;
  try {
    j = read_json_file(path);
  } catch (const json::exception& e) {
    throw ConfigError("cannot parse run config " + path.string() + ": " + e.what());
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  return parse_run_config(j, fs::absolute(path).parent_path(), env);
}

}  // namespace alqa::run
