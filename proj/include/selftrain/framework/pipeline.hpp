// Copyright 2026 The selftrain Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// The five-step lineage (A -> B -> pseudo -> C -> D), the baselines and the
// ablation grid. Every stage is keyed by a hash of the inputs that determine
// it and served from the artifact store when already computed.

#include <spdlog/spdlog.h>

#include <chrono>
#include <ctime>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "selftrain/framework/artifacts.hpp"
#include "selftrain/framework/pseudo.hpp"
#include "selftrain/framework/trainer.hpp"
#include "selftrain/metrics/report.hpp"

namespace selftrain {

// Shared state for a sequence of stage runs: the store, an optional batch
// observer, a one-slot corpus cache and the metrics emitted so far.
class RunContext {
 public:
  explicit RunContext(ArtifactStore& store, BatchObserver observer = {})
      : store_(store), observer_(std::move(observer)) {
    if (!store_.root().empty() && std::filesystem::exists(metrics_path()))
      for (const auto& r : read_metrics_jsonl(metrics_path())) written_.insert(r.run_id + "/" + r.metric);
  }

  ArtifactStore& store() { return store_; }
  const BatchObserver& observer() const { return observer_; }

  Workspace workspace(const PipelineConfig& c) {
    auto desc = data_descriptor(c);
    const auto key = config_hash(desc);
    if (key != corpus_key_) {
      corpus_.reset();
      corpus_ = load_corpus(c);
      corpus_key_ = key;
    }
    return make_workspace(c, corpus_, desc);
  }

  // Collects `r`; with an on-disk store also appends it to metrics.jsonl
  // unless a record with the same run id is already there.
  void emit(const MetricsRecord& r) {
    r.validate();
    records_.push_back(r);
    if (store_.root().empty()) return;
    if (written_.insert(r.run_id + "/" + r.metric).second) append_metrics_jsonl(metrics_path(), r);
  }

  const std::vector<MetricsRecord>& records() const { return records_; }
  std::filesystem::path metrics_path() const { return store_.root() / "metrics.jsonl"; }

 private:
  ArtifactStore& store_;
  BatchObserver observer_;
  std::shared_ptr<const Corpus> corpus_;
  std::string corpus_key_;
  std::vector<MetricsRecord> records_;
  std::set<std::string> written_;
};

namespace detail {

inline Model load_model(const StageArtifact& a, const Workspace& ws) {
  if (!a.checkpoint) throw ContractError("artifact " + a.stage + " has no checkpoint");
  auto m = Model::build(ws.encoder);
  m.deserialize(*a.checkpoint);
  return m;
}

inline nlohmann::json train_summary(const TrainLog& log) {
  return {{"steps", log.steps}, {"loss_head", log.head_mean()}, {"loss_tail", log.tail_mean()}};
}

inline nlohmann::json provenance_counts(std::span<const TrainItem> items) {
  std::map<std::string, std::size_t> n;
  for (const auto& it : items) ++n[to_string(it.provenance)];
  return n;
}

inline std::string metric_name(TaskKind task) { return task == TaskKind::classification ? "accuracy" : "span_f1"; }

inline std::string now_utc() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Trains (or fetches) the model and packages it as an artifact.
template <class Train>
ArtifactPtr run_stage(RunContext& ctx, const Workspace& ws, const std::string& stage, const nlohmann::json& key,
                      std::vector<std::string> parents, bool evaluate, Train&& train) {
  const auto hash = config_hash(key);
  if (auto hit = ctx.store().find(stage, hash)) {
    spdlog::debug("[{}] cache hit {}", stage, hash.substr(0, 12));
    return hit;
  }
  StageArtifact a;
  a.stage = stage;
  a.hash = hash;
  a.key = key;
  a.parents = std::move(parents);
  Model model = train(a.provenance);
  a.checkpoint = std::make_shared<const std::string>(model.serialize());
  a.provenance["checkpoint_sha256"] = sha256_hex(*a.checkpoint);
  a.provenance["task"] = ws.task();
  if (evaluate) {
    a.metric = metric_name(ws.task());
    a.score = evaluate_model(model, ws);
    spdlog::info("[{}] {} {} = {:.4f}", stage, hash.substr(0, 12), a.metric, *a.score);
  }
  return ctx.store().put(std::move(a));
}

}  // namespace detail

// Random initialisation shared by steps 1 and 4 and by the baseline.
inline ArtifactPtr init_artifact(RunContext& ctx, const Workspace& ws) {
  nlohmann::json key = {{"stage", "init"},
                        {"data", ws.data_key},
                        {"encoder", ws.encoder},
                        {"seed", ws.config.seed},
                        {"eval_batch_size", ws.config.eval_batch_size}};
  return detail::run_stage(ctx, ws, "init", key, {}, false, [&](nlohmann::json& prov) {
    auto m = init_model<float>(ws.encoder, ws.config.seed);
    prov["init_sha256"] = sha256_hex(m.serialize());
    return m;
  });
}

// Step 1: MLM on the unlabeled pool from the random init.
inline ArtifactPtr step1_domain_pretrain(RunContext& ctx, const Workspace& ws) {
  const auto& pool = ws.corpus->packed_pool;
  if (pool.empty()) throw ContractError("step1_domain_pretrain: the unlabeled pool is empty");
  auto init = init_artifact(ctx, ws);
  nlohmann::json key = {{"stage", "A"}, {"init", init->hash}, {"mask", ws.config.mask},
                        {"schedule", ws.config.schedules.pretrain}};
  return detail::run_stage(ctx, ws, "A", key, {init->hash}, false, [&](nlohmann::json& prov) {
    auto model = detail::load_model(*init, ws);
    prov["init_sha256"] = sha256_hex(*init->checkpoint);
    std::vector<TrainItem> items(pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i) {
      items[i].packed = &pool[i];
      items[i].provenance = Provenance::unlabeled;
      items[i].id = ws.corpus->pool[i].id;
    }
    auto log = train_model(model, items, ws.config.schedules.pretrain, {.kind = Objective::mlm}, ws,
                           derive_seed(ws.config.seed, "step1"), "A", ctx.observer());
    prov["train"] = detail::train_summary(log);
    prov["examples"] = detail::provenance_counts(items);
    spdlog::info("[A] {} MLM steps, loss {:.3f} -> {:.3f}", log.steps, log.head_mean(), log.tail_mean());
    return model;
  });
}

// Stage tag of a fine-tune: fixed by what it starts from and whether
// pseudo-labeled examples are mixed in.
inline std::string finetune_stage_tag(const std::string& base_stage, bool with_pseudo) {
  if (with_pseudo) return "classic-ST";
  if (base_stage == "init") return "baseline";
  if (base_stage == "A") return "B";
  if (base_stage == "C") return "D";
  throw ContractError("cannot fine-tune from a stage-" + base_stage + " artifact");
}

// Fine-tunes `base` on `items` with the task loss. `extra` distinguishes
// training sets beyond the gold labeled subset.
inline ArtifactPtr finetune(RunContext& ctx, const Workspace& ws, const ArtifactPtr& base,
                            std::span<const TrainItem> items, const nlohmann::json& extra = nullptr) {
  const bool with_pseudo = std::any_of(items.begin(), items.end(),
                                       [](const TrainItem& it) { return it.provenance == Provenance::pseudo; });
  const auto stage = finetune_stage_tag(base->stage, with_pseudo);
  nlohmann::json key = {{"stage", "finetune"},
                        {"base", base->hash},
                        {"labeled", ws.labeled_size},
                        {"schedule", ws.config.schedules.finetune},
                        {"seed", ws.config.seed},
                        {"extra", extra}};
  return detail::run_stage(ctx, ws, stage, key, {base->hash}, true, [&](nlohmann::json& prov) {
    auto model = detail::load_model(*base, ws);
    auto log = train_model(model, items, ws.config.schedules.finetune, {.kind = Objective::task}, ws,
                           derive_seed(ws.config.seed, "finetune"), stage, ctx.observer());
    prov["train"] = detail::train_summary(log);
    prov["examples"] = detail::provenance_counts(items);
    spdlog::info("[{}] {} fine-tune steps on {} examples, loss {:.3f} -> {:.3f}", stage, log.steps, items.size(),
                 log.head_mean(), log.tail_mean());
    return model;
  });
}

// Step 2: fine-tune Model-A on the labeled subset.
inline ArtifactPtr step2_finetune(RunContext& ctx, const Workspace& ws, const ArtifactPtr& a) {
  if (a->stage != "A") throw ContractError("step2_finetune: base must be a stage-A artifact, got " + a->stage);
  const auto items = gold_items(ws);
  return finetune(ctx, ws, a, items);
}

// Step 3: teacher predictions for the whole pool (eval mode).
inline ArtifactPtr step3_pseudo_label(RunContext& ctx, const Workspace& ws, const ArtifactPtr& teacher) {
  if (!teacher->score)
    throw ContractError("step3_pseudo_label: teacher must be a fine-tuned artifact, got " + teacher->stage);
  nlohmann::json key = {{"stage", "pseudo"},
                        {"teacher", teacher->hash},
                        {"confidence", ws.config.self_training.confidence}};
  const auto hash = config_hash(key);
  if (auto hit = ctx.store().find("pseudo", hash)) return hit;
  const auto model = detail::load_model(*teacher, ws);
  StageArtifact a;
  a.stage = "pseudo";
  a.hash = hash;
  a.key = key;
  a.parents = {teacher->hash};
  auto records = pseudo_label(model, ws, ws.corpus->pool, ws.corpus->packed_pool);
  a.provenance = {{"task", ws.task()}, {"cols", ws.num_outputs()}, {"count", records.size()}};
  a.records = std::make_shared<const std::vector<PseudoLabelRecord>>(std::move(records));
  spdlog::info("[pseudo] {} records from {} teacher {}", a.records->size(), teacher->stage,
               teacher->hash.substr(0, 12));
  return ctx.store().put(std::move(a));
}

// Step 4: from the step-1 initialisation, train on every pseudo-label record.
inline ArtifactPtr step4_task_specific_pretrain(RunContext& ctx, const Workspace& ws, const ArtifactPtr& pseudo,
                                                LossVariant loss, InputVariant input) {
  validate_pairing(loss, input);
  if (!pseudo->records || pseudo->records->empty())
    throw ContractError("step4_task_specific_pretrain: no pseudo-label records");
  auto init = init_artifact(ctx, ws);
  const bool masked = input == InputVariant::Masked;
  nlohmann::json key = {{"stage", "C"},
                        {"pseudo", pseudo->hash},
                        {"init", init->hash},
                        {"loss", loss},
                        {"input", input},
                        {"mask", masked ? nlohmann::json(ws.config.mask) : nlohmann::json()},
                        {"kl_temperature", uses_logits(loss) ? nlohmann::json(ws.config.kl_temperature) : nlohmann::json()},
                        {"schedule", ws.config.schedules.tsp}};
  return detail::run_stage(ctx, ws, "C", key, {pseudo->hash, init->hash}, ws.config.ablation.evaluate_c,
                           [&](nlohmann::json& prov) {
                             auto model = detail::load_model(*init, ws);
                             prov["init_sha256"] = sha256_hex(*init->checkpoint);
                             std::vector<std::size_t> all(pseudo->records->size());
                             std::iota(all.begin(), all.end(), 0);
                             auto data = pseudo_items(*pseudo->records, all, ws);
                             const ObjectiveSpec obj{.kind = Objective::tsp,
                                                     .variant = loss,
                                                     .masked_input = masked,
                                                     .kl_temperature = ws.config.kl_temperature};
                             auto log = train_model(model, data.items, ws.config.schedules.tsp, obj, ws,
                                                    derive_seed(ws.config.seed, "step4"), "C", ctx.observer());
                             prov["train"] = detail::train_summary(log);
                             prov["examples"] = detail::provenance_counts(data.items);
                             spdlog::info("[C] {} {} / {} steps, loss {:.3f} -> {:.3f}", to_string(loss),
                                          to_string(input), log.steps, log.head_mean(), log.tail_mean());
                             return model;
                           });
}

// Step 5: fine-tune Model-C on manually labeled data only.
inline ArtifactPtr step5_final_finetune(RunContext& ctx, const Workspace& ws, const ArtifactPtr& c,
                                        std::span<const TrainItem> labeled) {
  if (c->stage != "C") throw ContractError("step5_final_finetune: base must be a stage-C artifact, got " + c->stage);
  for (const auto& it : labeled)
    if (it.provenance != Provenance::gold)
      throw ContractError("step5_final_finetune: example " + std::to_string(it.id) + " is " +
                          to_string(it.provenance) + "; the final fine-tune takes manually labeled data only");
  return finetune(ctx, ws, c, labeled);
}

inline ArtifactPtr step5_final_finetune(RunContext& ctx, const Workspace& ws, const ArtifactPtr& c) {
  const auto items = gold_items(ws);
  return step5_final_finetune(ctx, ws, c, items);
}

struct ClassicResult {
  ArtifactPtr student;
  std::size_t selected = 0;                // |S| in the last iteration
  std::map<int, std::size_t> histogram;    // label -> count in S (NER: one bucket)
};

// Classic self-training: S = confident teacher records, sampled per class up
// to the cap; student = fine-tune(base, L then S). Later iterations relabel
// the pool with the previous student.
inline ClassicResult classic_self_training(RunContext& ctx, const Workspace& ws, const ArtifactPtr& base,
                                           ArtifactPtr records, double tau, const SelfTrainingConfig& st) {
  if (!(tau > 0.0)) throw ConfigError("classic_self_training: tau must be positive");
  if (!records) {
    const auto gold = gold_items(ws);
    records = step3_pseudo_label(ctx, ws, finetune(ctx, ws, base, gold));
  }
  ClassicResult out;
  const auto gold = gold_items(ws);
  for (std::size_t it = 0; it < std::max<std::size_t>(st.iterations, 1); ++it) {
    const auto& recs = *records->records;
    const bool cls = ws.task() == TaskKind::classification;
    const std::size_t groups = cls ? ws.num_outputs() : 1;
    const auto qualifying = static_cast<std::size_t>(
        std::count_if(recs.begin(), recs.end(), [&](const PseudoLabelRecord& r) { return r.confidence >= tau; }));
    const auto cap = resolve_per_class_cap(st, qualifying, groups);
    Rng rng(derive_seed(ws.config.seed, "classic.select", it));
    const auto chosen = select_confident(recs, tau, cap, ws.task(), rng);
    out.selected = chosen.size();
    out.histogram.clear();
    for (auto i : chosen) ++out.histogram[cls ? recs[i].label : 0];
    auto data = pseudo_items(recs, chosen, ws);
    std::vector<TrainItem> items(gold.begin(), gold.end());
    items.insert(items.end(), data.items.begin(), data.items.end());
    nlohmann::json extra;
    if (chosen.empty()) {
      spdlog::warn("[classic-ST] no record reaches confidence {}; the student trains on the labeled set alone", tau);
    } else {
      extra = {{"records", records->hash}, {"tau", tau}, {"cap", cap}, {"iteration", it}};
    }
    out.student = finetune(ctx, ws, base, items, extra);
    spdlog::info("[classic-ST] iteration {}: |S| = {} of {} qualifying (cap {})", it + 1, chosen.size(), qualifying,
                 cap);
    if (it + 1 < st.iterations) records = step3_pseudo_label(ctx, ws, out.student);
  }
  return out;
}

// Lazily materialises the artifacts of one workspace; every getter runs its
// prerequisites first.
class LineageRunner {
 public:
  LineageRunner(RunContext& ctx, Workspace ws) : ctx_(ctx), ws_(std::move(ws)) {}

  const Workspace& workspace() const { return ws_; }

  ArtifactPtr init() { return memo("init", [&] { return init_artifact(ctx_, ws_); }); }
  ArtifactPtr A() { return memo("A", [&] { return step1_domain_pretrain(ctx_, ws_); }); }
  ArtifactPtr B() { return memo("B", [&] { return step2_finetune(ctx_, ws_, A()); }); }
  ArtifactPtr pseudo() { return memo("pseudo", [&] { return step3_pseudo_label(ctx_, ws_, B()); }); }
  ArtifactPtr C() {
    return memo("C", [&] {
      return step4_task_specific_pretrain(ctx_, ws_, pseudo(), ws_.config.loss_variant, ws_.config.input_variant);
    });
  }
  ArtifactPtr D() { return memo("D", [&] { return step5_final_finetune(ctx_, ws_, C()); }); }
  ArtifactPtr baseline() {
    return memo("baseline", [&] {
      const auto gold = gold_items(ws_);
      return finetune(ctx_, ws_, init(), gold);
    });
  }
  // Classic self-training upon the random init ("base"), Model-A or Model-C.
  // Upon Model-C it reuses the step-3 records.
  ArtifactPtr classic(const std::string& upon) {
    return memo("classic-" + upon, [&] {
      const auto& st = ws_.config.self_training;
      if (upon == "base") return classic_self_training(ctx_, ws_, init(), step3_pseudo_label(ctx_, ws_, baseline()),
                                                       st.tau, st).student;
      if (upon == "A") return classic_self_training(ctx_, ws_, A(), pseudo(), st.tau, st).student;
      if (upon == "C") return classic_self_training(ctx_, ws_, C(), pseudo(), st.tau, st).student;
      throw ConfigError("classic self-training upon '" + upon + "' (expected base, A or C)");
    });
  }

  static bool uses_variants(const std::string& lineage) {
    return lineage == "C" || lineage == "D" || lineage == "classic-C";
  }

  ArtifactPtr get(const std::string& lineage) {
    if (lineage == "A") return A();
    if (lineage == "B") return B();
    if (lineage == "C") return C();
    if (lineage == "D") return D();
    if (lineage == "baseline") return baseline();
    if (lineage == "classic-base") return classic("base");
    if (lineage == "classic-A") return classic("A");
    if (lineage == "classic-C") return classic("C");
    throw ConfigError("unknown lineage '" + lineage + "'");
  }

  // Metrics record for an evaluated lineage stage.
  MetricsRecord record(const std::string& lineage) {
    const auto a = get(lineage);
    if (!a->score) throw ContractError("lineage " + lineage + " was not evaluated");
    MetricsRecord r;
    std::string stage = lineage;
    if (lineage.rfind("classic-", 0) == 0) {
      stage = "classic-ST";
      r.variant["base"] = lineage.substr(8);
    }
    if (uses_variants(lineage)) {
      r.variant["loss"] = to_string(ws_.config.loss_variant);
      r.variant["input"] = to_string(ws_.config.input_variant);
    }
    r.stage = stage;
    r.run_id = lineage + "-" + a->hash.substr(0, 16);
    r.labeled_size = ws_.labeled_size;
    r.metric = a->metric;
    r.value = *a->score;
    r.seed = ws_.config.seed;
    r.timestamp = ws_.config.deterministic ? "" : detail::now_utc();
    return r;
  }

 private:
  template <class F>
  ArtifactPtr memo(const std::string& name, F&& f) {
    if (auto it = done_.find(name); it != done_.end()) return it->second;
    ArtifactPtr a;
    try {
      a = f();
    } catch (const StageError&) {
      throw;
    } catch (const std::exception& e) {
      throw StageError(name, e.what());
    }
    done_[name] = a;
    return a;
  }

  RunContext& ctx_;
  Workspace ws_;
  std::map<std::string, ArtifactPtr> done_;
};

struct PipelineResult {
  std::map<std::string, ArtifactPtr> artifacts;  // A, B, pseudo, C, D (+ baselines)
  std::vector<MetricsRecord> records;
};

// Steps 1 to 5, then the baseline rows when `ablation.baselines` is set.
inline PipelineResult run_full_pipeline(RunContext& ctx, const PipelineConfig& config) {
  config.validate();
  LineageRunner run(ctx, ctx.workspace(config));
  PipelineResult out;
  for (const char* s : {"A", "B"}) out.artifacts[s] = run.get(s);
  out.artifacts["pseudo"] = run.pseudo();
  for (const char* s : {"C", "D"}) out.artifacts[s] = run.get(s);
  std::vector<std::string> rows{"B"};
  if (config.ablation.evaluate_c) rows.push_back("C");
  rows.push_back("D");
  if (config.ablation.baselines)
    for (const char* s : {"baseline", "classic-base", "classic-A", "classic-C"}) {
      out.artifacts[s] = run.get(s);
      rows.push_back(s);
    }
  for (const auto& row : rows) {
    out.records.push_back(run.record(row));
    ctx.emit(out.records.back());
  }
  return out;
}

struct GridCell {
  std::string lineage;
  std::size_t labeled_size = 0;
  std::uint64_t seed = 0;
  std::optional<LossVariant> loss;
  std::optional<InputVariant> input;
  std::optional<MetricsRecord> record;
  std::string skip_reason;  // non-empty for skipped cells
};

struct GridResult {
  std::vector<GridCell> cells;

  std::vector<MetricsRecord> records() const {
    std::vector<MetricsRecord> out;
    for (const auto& c : cells)
      if (c.record) out.push_back(*c.record);
    return out;
  }
  std::size_t executed() const { return records().size(); }
  std::size_t skipped() const { return cells.size() - executed(); }
};

inline const std::set<std::string>& grid_axes() {
  static const std::set<std::string> axes{"loss", "input", "labeled", "lineage", "seed"};
  return axes;
}

// Cartesian product of the requested axes; axes not requested take the
// config's single value. Loss and input vary only for lineages that use them.
inline GridResult run_ablation_grid(RunContext& ctx, const PipelineConfig& config, const std::set<std::string>& axes) {
  for (const auto& a : axes)
    if (!grid_axes().count(a)) throw ConfigError("unknown grid axis '" + a + "' (expected loss, input, labeled, lineage or seed)");
  const auto& g = config.grid;
  auto pick = [&](const std::string& axis, auto all, auto single) {
    return axes.count(axis) && !all.empty() ? all : decltype(all){single};
  };
  const auto losses = pick("loss", g.loss, config.loss_variant);
  const auto inputs = pick("input", g.input, config.input_variant);
  const auto sizes = pick("labeled", g.labeled, config.labeled_size);
  const auto lineages = pick("lineage", g.lineage, std::string("D"));
  const auto seeds = pick("seed", g.seeds, config.seed);

  GridResult out;
  for (auto seed : seeds)
    for (auto size : sizes) {
      auto base = config;
      base.seed = seed;
      base.labeled_size = size;
      for (const auto& lineage : lineages) {
        const bool variants = LineageRunner::uses_variants(lineage);
        for (std::size_t li = 0; li < (variants ? losses.size() : 1); ++li)
          for (std::size_t ii = 0; ii < (variants ? inputs.size() : 1); ++ii) {
            GridCell cell;
            cell.lineage = lineage;
            cell.labeled_size = size;
            cell.seed = seed;
            auto c = base;
            if (variants) {
              cell.loss = c.loss_variant = losses[li];
              cell.input = c.input_variant = inputs[ii];
              if (!is_legal_pairing(c.loss_variant, c.input_variant)) {
                cell.skip_reason = std::string("NoMask input cannot feed the MLM term of ") + to_string(c.loss_variant);
                spdlog::info("[grid] skip {} {}/{}: {}", lineage, to_string(c.loss_variant),
                             to_string(c.input_variant), cell.skip_reason);
                out.cells.push_back(std::move(cell));
                continue;
              }
            }
            c.validate();
            LineageRunner run(ctx, ctx.workspace(c));
            cell.record = run.record(lineage);
            ctx.emit(*cell.record);
            out.cells.push_back(std::move(cell));
          }
      }
    }
  return out;
}

// Row label used in grid tables, e.g. "D LogitsKL_only/NoMask".
inline std::string grid_row_label(const GridCell& c) {
  std::string s = c.lineage;
  if (c.loss) s += std::string(" ") + to_string(*c.loss) + "/" + to_string(*c.input);
  return s;
}

// One table: a row per lineage/variant combination, a column per labeled
// size, mean (± sample std over seeds) of the metric in percent.
inline std::string render_grid_table(const GridResult& grid, bool show_std = true) {
  std::vector<RowSpec> rows;
  std::set<std::string> seen;
  std::set<std::size_t> sizes;
  std::string metric;
  for (const auto& c : grid.cells) {
    if (!c.record) continue;
    sizes.insert(c.labeled_size);
    metric = c.record->metric;
    const auto label = grid_row_label(c);
    if (seen.insert(label).second) rows.push_back({label, c.record->stage, c.record->variant});
  }
  std::vector<ColumnSpec> cols;
  for (auto s : sizes) cols.push_back({"l=" + std::to_string(s), s, metric});
  return render_ablation_table(grid.records(), rows, cols, {.corner = "Method", .show_std = show_std});
}

// Rows of the lineage summary table (baselines first, then the A-to-D chain).
inline std::vector<RowSpec> lineage_rows() {
  return {{"Fine-tune only", "baseline", {}},
          {"Classic ST upon base", "classic-ST", {{"base", "base"}}},
          {"Classic ST upon Model-A", "classic-ST", {{"base", "A"}}},
          {"Classic ST upon Model-C", "classic-ST", {{"base", "C"}}},
          {"Model-B", "B", {}},
          {"Model-C", "C", {}},
          {"Model-D", "D", {}}};
}

inline std::string render_lineage_table(const std::vector<MetricsRecord>& records, bool show_std = false) {
  return render_ablation_table(records, lineage_rows(), columns_from_records(records),
                               {.corner = "Method", .show_std = show_std});
}

}  // namespace selftrain
