// Copyright 2026 The selftrain Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// `selftrain` command line: one subcommand per stage plus pipeline, grid,
// eval and report. Results go to `out`, logs and diagnostics to stderr.

#include <CLI11.hpp>
#include <Eigen/Core>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "selftrain/framework/pipeline.hpp"

namespace selftrain {

struct CliOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool deterministic = true;
  int threads = 1;
  std::string log_level = "info";
  std::string loss, input;
  std::optional<std::size_t> labeled;
};

namespace detail {

inline std::filesystem::path out_dir(const CliOptions& o) {
  if (!o.out.empty()) return o.out;
  if (const char* env = std::getenv("SELFTRAIN_OUT"); env && *env) return env;
  return "selftrain-out";
}

inline PipelineConfig resolve_config(const CliOptions& o) {
  PipelineConfig c = o.config.empty() ? PipelineConfig{} : load_config(o.config);
  if (o.seed) c.seed = *o.seed;
  if (!o.loss.empty()) c.loss_variant = parse_loss_variant(o.loss);
  if (!o.input.empty()) c.input_variant = parse_input_variant(o.input);
  if (o.labeled) c.labeled_size = *o.labeled;
  c.deterministic = o.deterministic;
  c.validate();
  return c;
}

// Run manifest: config hash, resolved config, artifact directories.
inline void write_manifest(const std::filesystem::path& root, const PipelineConfig& c,
                           const std::map<std::string, ArtifactPtr>& artifacts) {
  const nlohmann::json cj = c;
  const auto hash = config_hash(cj);
  nlohmann::json m = {{"config_hash", hash}, {"config", cj}, {"artifact_root", root.string()}};
  for (const auto& [name, a] : artifacts)
    m["stages"][name] = {{"hash", a->hash}, {"dir", a->dir.string()}, {"complete", true}};
  write_file_bytes(root / ("manifest-" + hash.substr(0, 16) + ".json"), m.dump(2) + "\n");
}

inline void print_artifact(std::ostream& out, const std::string& name, const ArtifactPtr& a) {
  out << name << "\t" << a->hash.substr(0, 16) << "\t" << (a->dir.empty() ? "(memory)" : a->dir.string());
  if (a->score) out << "\t" << a->metric << "=" << *a->score;
  out << "\n";
}

inline std::set<std::string> split_axes(const std::string& s) {
  std::set<std::string> axes;
  std::stringstream ss(s);
  for (std::string tok; std::getline(ss, tok, ',');)
    if (!tok.empty()) axes.insert(tok);
  return axes;
}

}  // namespace detail

// Parses argv and runs the subcommand. Returns 0 on success, 2 on usage
// errors and 1 when the command itself fails.
inline int cli_dispatch(int argc, const char* const* argv, std::ostream& out = std::cout,
                        std::ostream& err = std::cerr) {
  CLI::App app{"selftrain: pre-training and self-training experiments on a small transformer encoder",
               "selftrain"};
  app.require_subcommand(1);
  app.fallthrough();
  CliOptions o;
  app.add_option("--config", o.config, "pipeline config (JSON)");
  app.add_option("--seed", o.seed, "override the config seed");
  app.add_option("--out", o.out, "artifact directory (default $SELFTRAIN_OUT, else ./selftrain-out)");
  app.add_flag("--deterministic,!--no-deterministic", o.deterministic, "omit wall-clock timestamps (default on)");
  app.add_option("--threads", o.threads, "Eigen worker threads")->check(CLI::PositiveNumber);
  app.add_option("--log-level", o.log_level, "trace, debug, info, warn, error or off");
  app.add_option("--loss", o.loss, "override loss_variant");
  app.add_option("--input", o.input, "override input_variant");
  app.add_option("--labeled", o.labeled, "override labeled_size");

  auto* gen = app.add_subcommand("gen-data", "write the synthetic train/test/pool corpora");
  auto* pretrain = app.add_subcommand("pretrain", "step 1: MLM pre-training on the unlabeled pool (Model-A)");
  auto* finetune_cmd = app.add_subcommand("finetune", "step 2: fine-tune Model-A (or the init) on labeled data");
  std::string from = "A";
  finetune_cmd->add_option("--from", from, "A or init")->check(CLI::IsMember({"A", "init"}));
  auto* pseudo = app.add_subcommand("pseudo-label", "step 3: label the pool with Model-B");
  std::string pseudo_copy;
  pseudo->add_option("--write", pseudo_copy, "also copy the records to this JSONL file");
  auto* tsp = app.add_subcommand("tsp", "step 4: task-specific pre-training on pseudo-labels (Model-C)");
  auto* self_train = app.add_subcommand("self-train", "classic self-training");
  std::string upon = "base";
  std::optional<double> tau;
  self_train->add_option("--upon", upon, "base, A or C")->check(CLI::IsMember({"base", "A", "C"}));
  self_train->add_option("--tau", tau, "confidence threshold override");
  auto* pipeline = app.add_subcommand("pipeline", "steps 1-5, plus the baselines when ablation.baselines is set");
  bool baselines = false;
  pipeline->add_flag("--baselines", baselines, "also run the fine-tune and classic self-training rows");
  auto* grid = app.add_subcommand("grid", "ablation grid over the given axes");
  std::string axes = "loss,input";
  grid->add_option("--axes", axes, "comma list of loss, input, labeled, lineage, seed");
  auto* eval = app.add_subcommand("eval", "evaluate one lineage stage");
  std::string stage = "D";
  eval->add_option("--stage", stage, "B, C, D, baseline, classic-base, classic-A or classic-C");
  auto* report = app.add_subcommand("report", "render tables from a metrics JSONL file");
  std::string table = "ablation", in_path, baseline_stage = "baseline";
  bool show_std = false;
  report->add_option("--table", table, "ablation, lineage or delta")
      ->check(CLI::IsMember({"ablation", "lineage", "delta"}));
  report->add_option("--in", in_path, "metrics JSONL")->required();
  report->add_option("--baseline", baseline_stage, "baseline stage for --table delta");
  report->add_flag("--std", show_std, "append the seed standard deviation");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  if (!spdlog::get("selftrain")) spdlog::set_default_logger(spdlog::stderr_color_mt("selftrain"));
  spdlog::set_level(spdlog::level::from_str(o.log_level));
  Eigen::setNbThreads(o.threads);

  try {
    if (report->parsed()) {
      const auto records = read_metrics_jsonl(in_path);
      if (table == "lineage") {
        out << render_lineage_table(records, show_std);
      } else if (table == "delta") {
        const RowSpec base{baseline_stage, baseline_stage, {}};
        auto rows = rows_from_records(records);
        std::erase_if(rows, [&](const RowSpec& r) { return r.stage == baseline_stage && r.variant.empty(); });
        out << render_delta_table(records, base, rows, columns_from_records(records));
      } else {
        out << render_ablation_table(records, rows_from_records(records), columns_from_records(records),
                                     {.corner = "Method", .show_std = show_std});
      }
      return 0;
    }

    auto config = detail::resolve_config(o);
    if (pipeline->parsed() && baselines) config.ablation.baselines = true;
    const auto root = detail::out_dir(o);

    if (gen->parsed()) {
      if (config.data.from_files()) throw ConfigError("gen-data needs a generator config, not corpus files");
      auto g = config.data.generator;
      g.seed = config.data.data_seed >= 0 ? static_cast<std::uint64_t>(config.data.data_seed) : config.seed;
      const auto corpus = generate_corpus(config.task, g);
      std::filesystem::create_directories(root);
      write_corpus(root / "train.tsv", corpus.train, config.task, true);
      write_corpus(root / "test.tsv", corpus.test, config.task, true);
      write_corpus(root / "pool.tsv", corpus.pool, config.task, false);
      out << "wrote " << corpus.train.size() << " train, " << corpus.test.size() << " test and "
          << corpus.pool.size() << " pool examples to " << root.string() << "\n";
      return 0;
    }

    ArtifactStore store(root);
    RunContext ctx(store);
    LineageRunner run(ctx, ctx.workspace(config));
    if (pretrain->parsed()) {
      detail::print_artifact(out, "A", run.A());
    } else if (finetune_cmd->parsed()) {
      detail::print_artifact(out, from == "A" ? "B" : "baseline", from == "A" ? run.B() : run.baseline());
    } else if (pseudo->parsed()) {
      auto p = run.pseudo();
      detail::print_artifact(out, "pseudo", p);
      if (!pseudo_copy.empty()) write_pseudo_jsonl(pseudo_copy, *p->records, config.task);
    } else if (tsp->parsed()) {
      detail::print_artifact(out, "C", run.C());
    } else if (self_train->parsed()) {
      ArtifactPtr a;
      if (tau) {
        const auto base = upon == "base" ? run.init() : upon == "A" ? run.A() : run.C();
        const auto records = upon == "base" ? step3_pseudo_label(ctx, run.workspace(), run.baseline()) : run.pseudo();
        a = classic_self_training(ctx, run.workspace(), base, records, *tau, config.self_training).student;
      } else {
        a = run.classic(upon);
      }
      detail::print_artifact(out, "classic-ST", a);
    } else if (eval->parsed()) {
      const auto r = run.record(stage);
      ctx.emit(r);
      out << nlohmann::json(r).dump() << "\n";
    } else if (pipeline->parsed()) {
      auto result = run_full_pipeline(ctx, config);
      for (const auto& [name, a] : result.artifacts) detail::print_artifact(out, name, a);
      detail::write_manifest(root, config, result.artifacts);
      out << "\n" << render_lineage_table(result.records);
    } else if (grid->parsed()) {
      auto g = run_ablation_grid(ctx, config, detail::split_axes(axes));
      for (const auto& c : g.cells) {
        out << grid_row_label(c) << "\tl=" << c.labeled_size << "\tseed=" << c.seed << "\t";
        if (c.record)
          out << c.record->metric << "=" << c.record->value << "\n";
        else
          out << "skipped: " << c.skip_reason << "\n";
      }
      out << g.executed() << " cells run, " << g.skipped() << " skipped\n\n" << render_grid_table(g);
    }
    return 0;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace selftrain
