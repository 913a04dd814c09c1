#include "alqa/report/report.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>

#include <spdlog/spdlog.h>

#include "alqa/common/error.hpp"
#include "alqa/generator/qa2s.hpp"

namespace alqa::report {

std::vector<ScoreCurve> report_scores(std::span<const ScoreDump> dumps) {
  if (dumps.empty()) throw PreconditionError("report_scores needs at least one score dump");
  std::vector<ScoreCurve> curves;
  for (const auto& d : dumps) {
    if (d.scores.empty()) {
      spdlog::warn("report: score dump '{}' is empty", d.source);
      continue;
    }
    double lo = d.scores.front().raw_score, hi = lo;
    for (const auto& s : d.scores) {
      lo = std::min(lo, s.raw_score);
      hi = std::max(hi, s.raw_score);
    }
    const bool constant = hi == lo;
    if (constant) spdlog::warn("report: scores in '{}' are constant ({}); rescaled to zeros", d.source, lo);

    std::map<std::pair<int, std::string>, std::vector<const acquisition::AcquisitionScore*>> groups;
    for (const auto& s : d.scores) groups[{s.iteration, std::string(acquisition::to_string(s.strategy))}].push_back(&s);
    for (auto& [key, rows] : groups) {
      std::sort(rows.begin(), rows.end(), [](auto* a, auto* b) {
        if (a->raw_score != b->raw_score) return a->raw_score < b->raw_score;
        return a->candidate_id < b->candidate_id;
      });
      ScoreCurve c;
      c.source = d.source;
      c.iteration = key.first;
      c.strategy = key.second;
      c.raw_min = rows.front()->raw_score;
      c.raw_max = rows.back()->raw_score;
      c.constant = constant;
      const std::size_t n = rows.size();
      for (std::size_t i = 0; i < n; ++i) {
        c.rank_fraction.push_back(n == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(n - 1));
        c.rescaled.push_back(constant ? 0.0 : (rows[i]->raw_score - lo) / (hi - lo));
        if (!rows[i]->flags.empty()) ++c.flagged;
      }
      curves.push_back(std::move(c));
    }
  }
  return curves;
}

void write_score_csv(const std::filesystem::path& path, std::span<const ScoreCurve> curves) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out.precision(10);
  out << "source,strategy,iteration,rank_fraction,rescaled_score\n";
  for (const auto& c : curves)
    for (std::size_t i = 0; i < c.rescaled.size(); ++i)
      out << c.source << ',' << c.strategy << ',' << c.iteration << ',' << c.rank_fraction[i] << ','
          << c.rescaled[i] << '\n';
}

json score_summary(std::span<const ScoreCurve> curves) {
  json rows = json::array();
  for (const auto& c : curves) {
    const auto n = c.rescaled.size();
    double mean = 0.0;
    for (double v : c.rescaled) mean += v;
    rows.push_back({{"source", c.source},
                    {"strategy", c.strategy},
                    {"iteration", c.iteration},
                    {"n", n},
                    {"raw_min", c.raw_min},
                    {"raw_max", c.raw_max},
                    {"rescaled_mean", n ? mean / n : 0.0},
                    {"rescaled_median", n ? c.rescaled[n / 2] : 0.0},
                    {"flagged", c.flagged},
                    {"constant", c.constant}});
  }
  return rows;
}

StatsView reader_view(std::string name, const corpus::Tokenizer& tokenizer, const reader::ReaderTrainConfig& cfg) {
  return {std::move(name), &tokenizer, [&tokenizer, cfg](const corpus::QASample& s, const corpus::Document& d) {
            const auto q = reader::reader_question(s.question, tokenizer, cfg);
            return reader::reader_chunks(d.text, q.size(), tokenizer, cfg).size();
          }};
}

StatsView generator_view(std::string name, const corpus::Tokenizer& tokenizer,
                         const generator::GenInputLayout& layout) {
  return {std::move(name), &tokenizer, [&tokenizer, layout](const corpus::QASample& s, const corpus::Document& d) {
            return generator::build_training_pairs(s, d, tokenizer, layout).size();
          }};
}

SampleStats report_sample_stats(std::span<const Selection> selections, const corpus::DocumentIndex& docs,
                                std::span<const StatsView> views) {
  if (selections.empty()) throw PreconditionError("report_sample_stats needs at least one selection");
  SampleStats out;
  for (const auto& v : views) out.views.push_back(v.name);

  std::vector<std::set<std::string>> ids;
  for (const auto& sel : selections) {
    StrategyStats row;
    row.strategy = sel.strategy;
    row.samples = sel.samples.size();
    row.mean_context_length.assign(views.size(), 0.0);
    row.mean_question_length.assign(views.size(), 0.0);
    row.instances.assign(views.size(), 0);
    std::set<std::string> contexts, sample_ids;
    // document lengths are cached per view since selections repeat contexts
    std::vector<std::map<std::string, std::size_t>> ctx_len(views.size());
    for (const auto& s : sel.samples) {
      auto it = docs.find(s.document_id);
      if (it == docs.end()) throw DataError("sample " + s.id + " refers to unknown document " + s.document_id);
      const auto& doc = *it->second;
      contexts.insert(s.document_id);
      sample_ids.insert(s.id);
      for (std::size_t v = 0; v < views.size(); ++v) {
        auto [c, fresh] = ctx_len[v].try_emplace(doc.id, 0);
        if (fresh) c->second = views[v].tokenizer->count(doc.text);
        row.mean_context_length[v] += static_cast<double>(c->second);
        row.mean_question_length[v] += static_cast<double>(views[v].tokenizer->count(s.question));
        if (views[v].instances) row.instances[v] += views[v].instances(s, doc);
      }
    }
    if (row.samples)
      for (std::size_t v = 0; v < views.size(); ++v) {
        row.mean_context_length[v] /= static_cast<double>(row.samples);
        row.mean_question_length[v] /= static_cast<double>(row.samples);
      }
    row.unique_contexts = contexts.size();
    out.rows.push_back(std::move(row));
    ids.push_back(std::move(sample_ids));
  }

  out.overlap.assign(ids.size(), std::vector<std::size_t>(ids.size(), 0));
  for (std::size_t i = 0; i < ids.size(); ++i)
    for (std::size_t j = 0; j < ids.size(); ++j) {
      std::size_t n = 0;
      for (const auto& id : ids[i]) n += ids[j].count(id);
      out.overlap[i][j] = n;
    }
  return out;
}

json stats_to_json(const SampleStats& stats) {
  json rows = json::array();
  for (const auto& r : stats.rows)
    rows.push_back({{"strategy", r.strategy},
                    {"samples", r.samples},
                    {"unique_contexts", r.unique_contexts},
                    {"mean_context_length", r.mean_context_length},
                    {"mean_question_length", r.mean_question_length},
                    {"instances", r.instances}});
  json labels = json::array();
  for (const auto& r : stats.rows) labels.push_back(r.strategy);
  return {{"views", stats.views}, {"rows", rows}, {"overlap", {{"labels", labels}, {"matrix", stats.overlap}}}};
}

void write_stats_csv(const std::filesystem::path& stats_path, const std::filesystem::path& overlap_path,
                     const SampleStats& stats) {
  for (const auto& p : {stats_path, overlap_path})
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(stats_path);
  if (!out) throw Error("cannot write " + stats_path.string());
  out.precision(6);
  out << std::fixed;
  out << "strategy,samples,unique_contexts";
  for (const auto& v : stats.views) out << ",context_length_" << v;
  for (const auto& v : stats.views) out << ",question_length_" << v;
  for (const auto& v : stats.views) out << ",instances_" << v;
  out << '\n';
  for (const auto& r : stats.rows) {
    out << r.strategy << ',' << r.samples << ',' << r.unique_contexts;
    for (double x : r.mean_context_length) out << ',' << x;
    for (double x : r.mean_question_length) out << ',' << x;
    for (auto x : r.instances) out << ',' << x;
    out << '\n';
  }

  std::ofstream ov(overlap_path);
  if (!ov) throw Error("cannot write " + overlap_path.string());
  ov << "strategy";
  for (const auto& r : stats.rows) ov << ',' << r.strategy;
  ov << '\n';
  for (std::size_t i = 0; i < stats.rows.size(); ++i) {
    ov << stats.rows[i].strategy;
    for (auto x : stats.overlap[i]) ov << ',' << x;
    ov << '\n';
  }
}

}  // namespace alqa::report
