// alqa: command line front end. Exit codes: 0 ok, 2 config or usage error, 3 data error,
// 4 runtime failure.

#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "alqa/common/error.hpp"
#include "alqa/run/commands.hpp"

namespace fs = std::filesystem;
using namespace alqa;

namespace {

void print(const json& j) { std::cout << j.dump(2) << std::endl; }

int dispatch(int argc, char** argv) {
  CLI::App app{"Active learning for QA data generation: ingest, train, synthesize, score, run experiments"};
  app.require_subcommand(1);
  std::string config_path, log_level = "info";
  bool force = false;
  app.add_option("--log-level", log_level, "trace|debug|info|warn|error")->capture_default_str();

  auto with_config = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_path, "run config JSON")->required()->check(CLI::ExistingFile);
    sub->add_flag("--force", force, "rerun even when the outputs are current");
  };

  run::MakeToyOptions toy;
  auto* make_toy = app.add_subcommand("make-toy", "write a toy key-value corpus, tokenizer and run.json");
  make_toy->add_option("--out", toy.out, "output directory")->required();
  make_toy->add_option("--source-docs", toy.source_docs)->capture_default_str();
  make_toy->add_option("--target-docs", toy.target_docs)->capture_default_str();
  make_toy->add_option("--seed", toy.seed)->capture_default_str();

  run::IngestCommand ing;
  std::string ing_docs, ing_tok;
  auto* ingest = app.add_subcommand("ingest", "read a QA dataset into native JSONL with a manifest");
  ingest->add_option("input", ing.input, "dataset file")->required()->check(CLI::ExistingFile);
  ingest->add_option("--format", ing.format, "mrqa_jsonl|squad_json|native_jsonl")->capture_default_str();
  ingest->add_option("--out", ing.out, "output directory")->required();
  ingest->add_option("--name", ing.name);
  ingest->add_option("--domain", ing.domain)->capture_default_str();
  ingest->add_option("--documents", ing_docs, "documents JSONL (native_jsonl)");
  ingest->add_option("--tokenizer", ing_tok, "tokenizer file for token counts");
  ingest->add_option("--max-rejected", ing.max_rejected_fraction)->capture_default_str();

  run::TrainGenCommand tg;
  auto* train_gen = app.add_subcommand("train-gen", "train the question-answer generator");
  with_config(train_gen);
  train_gen->add_option("--stage", tg.stage, "source|target")->capture_default_str();

  run::TrainReaderCommand tr;
  std::string tr_synth;
  auto* train_reader = app.add_subcommand("train-reader", "train a reader");
  with_config(train_reader);
  train_reader->add_option("--on", tr.on, "source|target|synthetic")->capture_default_str();
  train_reader->add_option("--synthetic", tr_synth, "synthetic corpus (default: filtered output)");

  run::SynthesizeCommand sy;
  std::string sy_gen, sy_out;
  auto* synth = app.add_subcommand("synthesize", "generate synthetic QA pairs on the unlabeled documents");
  with_config(synth);
  synth->add_option("--generator", sy_gen, "generator checkpoint");
  synth->add_option("--out", sy_out, "output JSONL");

  run::FilterCommand fi;
  std::string fi_in, fi_out, fi_mode, fi_reader;
  auto* filt = app.add_subcommand("filter", "filter a synthetic corpus");
  with_config(filt);
  filt->add_option("--input", fi_in);
  filt->add_option("--out", fi_out);
  filt->add_option("--mode", fi_mode, "none|lm|rtcons|both");
  filt->add_option("--reader", fi_reader, "RTcons reader checkpoint");

  run::ScoreCommand sc;
  std::size_t sc_select = 0;
  auto* score = app.add_subcommand("score", "score and rank the target pool with one acquisition strategy");
  with_config(score);
  score->add_option("--strategy", sc.strategy, "sp|dsp|ls|rt|dsp_rt|bald|random")->required();
  score->add_option("--select", sc_select, "number to select (default recipe.batch)");
  score->add_option("--iteration", sc.iteration)->capture_default_str();

  run::AlRunCommand al;
  std::string al_recipe, al_strategy, al_name;
  auto* al_run = app.add_subcommand("al-run", "run an active learning experiment");
  with_config(al_run);
  al_run->add_option("--recipe", al_recipe, "placement (default recipe.placement)");
  al_run->add_option("--strategy", al_strategy, "acquisition strategy (default recipe.strategy)");
  al_run->add_option("--name", al_name, "experiment directory name");
  al_run->add_flag("--resume", al.resume, "continue a suspended experiment");

  run::BaselineCommand bl;
  std::string bl_name;
  auto* base = app.add_subcommand("baseline", "run a supervised baseline");
  with_config(base);
  base->add_option("--recipe", bl.placement, "target_only_baseline|source_plus_target_baseline")
      ->capture_default_str();
  base->add_option("--name", bl_name);

  run::EvaluateCommand ev;
  std::string ev_pred, ev_gold, ev_ckpt, ev_out, ev_config;
  auto* eval = app.add_subcommand("evaluate", "EM/F1 of predictions or of a reader checkpoint");
  eval->add_option("--predictions", ev_pred, "JSONL {id, prediction} or JSON {id: prediction}");
  eval->add_option("--gold", ev_gold, "gold corpus manifest");
  eval->add_option("-c,--config", ev_config, "run config (with --checkpoint)");
  eval->add_option("--checkpoint", ev_ckpt, "reader checkpoint");
  eval->add_option("--split", ev.split, "dev|eval")->capture_default_str();
  eval->add_option("--out", ev_out, "report directory");

  auto* rep = app.add_subcommand("report", "analysis reports");
  rep->require_subcommand(1);
  run::ReportScoresCommand rs;
  auto* rep_scores = rep->add_subcommand("scores", "sorted score curves rescaled to [0,1]");
  rep_scores->add_option("dumps", rs.dumps, "score dump files or directories")->required();
  rep_scores->add_option("--out", rs.out)->required();
  run::ReportSamplesCommand rsm;
  auto* rep_samples = rep->add_subcommand("samples", "per-strategy sample statistics and overlap");
  rep_samples->add_option("-c,--config", config_path, "run config JSON")->required()->check(CLI::ExistingFile);
  rep_samples->add_option("--selection", rsm.selections, "label=experiment_dir or label=samples.jsonl")->required();
  rep_samples->add_option("--out", rsm.out)->required();

  run::ServeCommand sv;
  std::string sv_host;
  int sv_port = -1;
  auto* serve = app.add_subcommand("serve", "serve the annotation HTTP API over the run's store");
  serve->add_option("-c,--config", config_path, "run config JSON")->required()->check(CLI::ExistingFile);
  serve->add_option("--host", sv_host);
  serve->add_option("--port", sv_port);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  spdlog::set_level(spdlog::level::from_str(log_level));

  run::Invocation inv{{argv, argv + argc}, force};
  const auto env = run::process_environment();
  auto cfg = [&] { return run::load_run_config(config_path, env); };
  auto opt = [](const std::string& s) { return s.empty() ? std::optional<fs::path>() : std::optional<fs::path>(s); };
  auto opt_str = [](const std::string& s) { return s.empty() ? std::optional<std::string>() : std::optional(s); };

  if (*make_toy) {
    print(run::make_toy(toy));
  } else if (*ingest) {
    ing.documents = opt(ing_docs);
    ing.tokenizer = opt(ing_tok);
    print(run::ingest(ing));
  } else if (*train_gen) {
    print(run::train_gen(cfg(), tg, inv));
  } else if (*train_reader) {
    tr.synthetic = opt(tr_synth);
    print(run::train_reader(cfg(), tr, inv));
  } else if (*synth) {
    sy.generator = opt(sy_gen);
    sy.out = opt(sy_out);
    print(run::synthesize(cfg(), sy, inv));
  } else if (*filt) {
    fi.input = opt(fi_in);
    fi.out = opt(fi_out);
    fi.mode = opt_str(fi_mode);
    fi.reader = opt(fi_reader);
    print(run::filter(cfg(), fi, inv));
  } else if (*score) {
    if (sc_select) sc.select = sc_select;
    print(run::score(cfg(), sc, inv));
  } else if (*al_run) {
    al.placement = opt_str(al_recipe);
    al.strategy = opt_str(al_strategy);
    al.name = opt_str(al_name);
    print(run::al_run(cfg(), al, inv));
  } else if (*base) {
    bl.name = opt_str(bl_name);
    print(run::baseline(cfg(), bl, inv));
  } else if (*eval) {
    ev.predictions = opt(ev_pred);
    ev.gold = opt(ev_gold);
    ev.checkpoint = opt(ev_ckpt);
    ev.out = opt(ev_out);
    std::optional<run::RunConfig> c;
    if (!ev_config.empty()) c = run::load_run_config(ev_config, env);
    print(run::evaluate(c, ev));
  } else if (*rep_scores) {
    print(run::report_scores_cmd(rs));
  } else if (*rep_samples) {
    print(run::report_samples_cmd(cfg(), rsm));
  } else if (*serve) {
    if (!sv_host.empty()) sv.host = sv_host;
    if (sv_port >= 0) sv.port = sv_port;
    run::serve(cfg(), sv);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return dispatch(argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ValidationError& e) {
    std::cerr << "config error: " << e.field() << ": " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
}
