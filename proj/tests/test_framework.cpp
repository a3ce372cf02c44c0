// Copyright 2026 The selftrain Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <map>

#include "selftrain/framework/pipeline.hpp"
#include "support/small_config.hpp"

using namespace selftrain;
using selftrain::testing::small_config;

namespace {

std::filesystem::path fresh_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("selftrain_test_" + name);
  std::filesystem::remove_all(p);
  return p;
}

// independent softmax max
double max_prob(std::span<const float> row) {
  double mx = -1e300;
  for (float v : row) mx = std::max(mx, static_cast<double>(v));
  double z = 0;
  for (float v : row) z += std::exp(v - mx);
  return 1.0 / z;
}

}  // namespace

TEST_CASE("zero steps leave the initialisation untouched") {
  auto c = small_config();
  c.schedules.pretrain.steps = 0;
  c.schedules.tsp.steps = 0;
  c.schedules.finetune.epochs = 0;
  ArtifactStore store;
  RunContext ctx(store);
  LineageRunner run(ctx, ctx.workspace(c));
  const auto init = *run.init()->checkpoint;
  CHECK(*run.A()->checkpoint == init);
  CHECK(*run.B()->checkpoint == init);
  CHECK(*run.C()->checkpoint == init);
  CHECK(*run.D()->checkpoint == init);
  CHECK(init == init_model<float>(run.workspace().encoder, c.seed).serialize());
}

TEST_CASE("step 1 lowers the MLM loss and is deterministic") {
  auto c = small_config();
  c.schedules.pretrain.steps = 120;
  ArtifactStore s1, s2;
  RunContext ctx1(s1), ctx2(s2);
  auto a1 = step1_domain_pretrain(ctx1, ctx1.workspace(c));
  auto a2 = step1_domain_pretrain(ctx2, ctx2.workspace(c));
  CHECK(sha256_hex(*a1->checkpoint) == sha256_hex(*a2->checkpoint));
  const auto& t = a1->provenance.at("train");
  CHECK(t.at("steps").get<std::size_t>() == 120);
  CHECK(t.at("loss_tail").get<double>() < t.at("loss_head").get<double>());
  CHECK(a1->provenance.at("examples").at("unlabeled").get<std::size_t>() == 320);
}

TEST_CASE("step 1 rejects an empty pool") {
  auto c = small_config();
  ArtifactStore store;
  RunContext ctx(store);
  auto ws = ctx.workspace(c);
  auto corpus = std::make_shared<Corpus>(*ws.corpus);
  corpus->pool.clear();
  corpus->packed_pool.clear();
  ws.corpus = corpus;
  CHECK_THROWS_AS(step1_domain_pretrain(ctx, ws), ContractError);
}

TEST_CASE("fine-tuning on one example fits it") {
  auto c = small_config();
  c.labeled_size = 1;
  c.schedules.finetune = {.steps = 60, .epochs = 0, .batch_size = 1, .lr = 1e-2};
  ArtifactStore store;
  RunContext ctx(store);
  LineageRunner run(ctx, ctx.workspace(c));
  const auto& ws = run.workspace();
  auto b = run.B();
  auto model = detail::load_model(*b, ws);
  auto out = head_outputs(model, ws.packed_labeled(), ws.task(), 1);
  CHECK(argmax_row(out[0]) == ws.labeled()[0].label);
}

TEST_CASE("fine-tuning beats the untrained head") {
  auto c = small_config();
  c.schedules.finetune.epochs = 15;
  ArtifactStore store;
  RunContext ctx(store);
  LineageRunner run(ctx, ctx.workspace(c));
  const auto before = evaluate_model(detail::load_model(*run.A(), run.workspace()), run.workspace());
  INFO("A " << before << " B " << *run.B()->score);
  CHECK(*run.B()->score > before + 0.1);
}

TEST_CASE("pseudo-label records: label is the argmax, confidence recomputes") {
  auto c = small_config();
  ArtifactStore store;
  RunContext ctx(store);
  LineageRunner run(ctx, ctx.workspace(c));
  auto p = run.pseudo();
  REQUIRE(p->records->size() == run.workspace().corpus->pool.size());
  CHECK(p->parents == std::vector<std::string>{run.B()->hash});
  for (const auto& r : *p->records) {
    REQUIRE(r.logits.size() == 4);
    CHECK(r.label == argmax_row(r.logits));
    CHECK(r.confidence == Catch::Approx(max_prob(r.logits)).epsilon(1e-12));
    CHECK(r.confidence >= 0.0);
    CHECK(r.confidence <= 1.0);
  }

  // file round trip
  auto dir = fresh_dir("pseudo_io");
  std::filesystem::create_directories(dir);
  write_pseudo_jsonl(dir / "p.jsonl", *p->records, TaskKind::classification);
  CHECK(read_pseudo_jsonl(dir / "p.jsonl", TaskKind::classification, 4) == *p->records);
}

TEST_CASE("a constant teacher labels everything alike") {
  auto c = small_config();
  ArtifactStore store;
  RunContext ctx(store);
  auto ws = ctx.workspace(c);
  auto m = init_model<float>(ws.encoder, 1);
  std::fill(m.cls_w.data().begin(), m.cls_w.data().end(), 0.0f);
  const std::vector<float> bias{0.1f, 1.7f, -0.4f, 0.9f};
  std::copy(bias.begin(), bias.end(), m.cls_b.data().begin());
  auto recs = pseudo_label(m, ws, ws.corpus->pool, ws.corpus->packed_pool);
  const double expect = max_prob(bias);
  for (const auto& r : recs) {
    CHECK(r.label == 1);
    CHECK(r.confidence == Catch::Approx(expect).epsilon(1e-5));
  }
}

TEST_CASE("NER records carry the teacher's Viterbi path") {
  auto c = small_config(TaskKind::ner);
  ArtifactStore store;
  RunContext ctx(store);
  LineageRunner run(ctx, ctx.workspace(c));
  const auto& ws = run.workspace();
  auto teacher = detail::load_model(*run.B(), ws);
  auto p = run.pseudo();
  const auto K = ws.corpus->tagset.size();
  std::size_t checked = 0;
  for (const auto& r : *p->records) {
    REQUIRE(r.cols == K);
    REQUIRE(r.logits.size() == r.rows * K);
    REQUIRE(r.tags.size() == r.rows);
    CHECK(utf8_decode(r.fields[0]).size() == r.rows);
    if (r.rows == 0) continue;
    CHECK(ws.corpus->tagset.ids(r.tags) == crf_viterbi<float>(r.logits, {}, teacher.crf));
    double s = 0;
    for (std::size_t t = 0; t < r.rows; ++t) s += max_prob(std::span<const float>(r.logits).subspan(t * K, K));
    CHECK(r.confidence == Catch::Approx(s / static_cast<double>(r.rows)).epsilon(1e-9));
    ++checked;
  }
  CHECK(checked > 100);
  auto dir = fresh_dir("pseudo_ner_io");
  std::filesystem::create_directories(dir);
  write_pseudo_jsonl(dir / "p.jsonl", *p->records, TaskKind::ner);
  CHECK(read_pseudo_jsonl(dir / "p.jsonl", TaskKind::ner, K) == *p->records);
}

TEST_CASE("step 4 starts from the step 1 initialisation") {
  auto c = small_config();
  ArtifactStore store;
  RunContext ctx(store);
  LineageRunner run(ctx, ctx.workspace(c));
  CHECK(run.A()->provenance.at("init_sha256") == run.C()->provenance.at("init_sha256"));
  CHECK(run.C()->provenance.at("init_sha256").get<std::string>() == sha256_hex(*run.init()->checkpoint));
  CHECK(run.C()->provenance.at("examples").at("pseudo").get<std::size_t>() == 320);
}

TEST_CASE("masked and unmasked step-4 input") {
  for (auto [loss, input] : {std::pair{LossVariant::LogitsKL_plus_MLM, InputVariant::Masked},
                             std::pair{LossVariant::LogitsKL_only, InputVariant::NoMask},
                             std::pair{LossVariant::LabelCE_only, InputVariant::Masked}}) {
    auto c = small_config();
    c.loss_variant = loss;
    c.input_variant = input;
    std::size_t masked = 0, tokens = 0, batches = 0;
    ArtifactStore store;
    RunContext ctx(store, [&](const std::string& stage, const TrainBatch& b) {
      if (stage != "C") return;
      ++batches;
      masked += b.num_masked_tokens;
      for (auto m : b.mask) tokens += m;
      for (auto p : b.provenance) CHECK(p == Provenance::pseudo);
    });
    LineageRunner run(ctx, ctx.workspace(c));
    run.C();
    INFO(to_string(loss) << " " << to_string(input));
    CHECK(batches == 20);
    if (input == InputVariant::NoMask) {
      CHECK(masked == 0);
    } else {
      // roughly 15% x 80% of the non-special tokens
      const double frac = static_cast<double>(masked) / static_cast<double>(tokens);
      CHECK(frac > 0.05);
      CHECK(frac < 0.2);
    }
  }
  auto c = small_config();
  ArtifactStore store;
  RunContext ctx(store);
  LineageRunner run(ctx, ctx.workspace(c));
  CHECK_THROWS_AS(step4_task_specific_pretrain(ctx, run.workspace(), run.pseudo(), LossVariant::LabelCE_plus_MLM,
                                               InputVariant::NoMask),
                  ConfigError);
}

TEST_CASE("step 5 sees manually labeled data only") {
  auto c = small_config();
  std::size_t d_batches = 0;
  ArtifactStore store;
  RunContext ctx(store, [&](const std::string& stage, const TrainBatch& b) {
    if (stage != "D") return;
    ++d_batches;
    for (auto p : b.provenance) REQUIRE(p == Provenance::gold);
  });
  LineageRunner run(ctx, ctx.workspace(c));
  auto d = run.D();
  CHECK(d_batches == 3 * 4);
  CHECK(d->stage == "D");
  CHECK(d->parents == std::vector<std::string>{run.C()->hash});

  const auto& ws = run.workspace();
  auto gold = gold_items(ws);
  std::vector<std::size_t> first{0};
  auto pseudo = pseudo_items(*run.pseudo()->records, first, ws);
  auto mixed = gold;
  mixed.push_back(pseudo.items[0]);
  CHECK_THROWS_AS(step5_final_finetune(ctx, ws, run.C(), mixed), ContractError);
  CHECK_THROWS_AS(step5_final_finetune(ctx, ws, run.A(), gold), ContractError);
}

TEST_CASE("classic self-training with no qualifying record equals plain fine-tuning") {
  auto c = small_config();
  ArtifactStore s1, s2;
  RunContext ctx1(s1), ctx2(s2);
  LineageRunner r1(ctx1, ctx1.workspace(c)), r2(ctx2, ctx2.workspace(c));
  auto plain = r1.baseline();
  auto st = classic_self_training(ctx2, r2.workspace(), r2.init(), nullptr, 1.0 + 1e-9, c.self_training);
  CHECK(st.selected == 0);
  CHECK(*st.student->score == *plain->score);
  CHECK(sha256_hex(*st.student->checkpoint) == sha256_hex(*plain->checkpoint));
}

TEST_CASE("classic self-training sampling matches an independent oracle") {
  auto c = small_config();
  c.self_training.sample_size = 60;
  ArtifactStore store;
  RunContext ctx(store);
  LineageRunner run(ctx, ctx.workspace(c));
  const auto& ws = run.workspace();
  auto records = run.pseudo();
  const double tau = c.self_training.tau;
  auto st = classic_self_training(ctx, ws, run.A(), records, tau, c.self_training);

  // oracle: filter, bucket by label, shuffle buckets in label order, keep 15
  const std::size_t cap = 15;
  std::map<int, std::vector<std::size_t>> buckets;
  for (std::size_t i = 0; i < records->records->size(); ++i)
    if ((*records->records)[i].confidence >= tau) buckets[(*records->records)[i].label].push_back(i);
  Rng rng(derive_seed(c.seed, "classic.select", 0));
  std::map<int, std::size_t> expect;
  std::size_t total = 0;
  for (auto& [label, idx] : buckets) {
    rng.shuffle(idx);
    expect[label] = std::min(idx.size(), cap);
    total += expect[label];
  }
  CHECK(st.histogram == expect);
  CHECK(st.selected == total);
  for (const auto& [label, n] : st.histogram) CHECK(n <= cap);
  CHECK(st.student->stage == "classic-ST");
  CHECK(st.student->provenance.at("examples").at("pseudo").get<std::size_t>() == total);
  CHECK(st.student->provenance.at("examples").at("gold").get<std::size_t>() == 120);
}

TEST_CASE("full pipeline lineage, persistence and re-runs") {
  auto c = small_config();
  c.ablation.baselines = true;
  const auto dir = fresh_dir("pipeline");
  PipelineResult first;
  {
    ArtifactStore store(dir);
    RunContext ctx(store);
    first = run_full_pipeline(ctx, c);
    CHECK(store.runs("A") == 1);
  }
  const auto& a = first.artifacts;
  CHECK(a.at("B")->parents == std::vector<std::string>{a.at("A")->hash});
  CHECK(a.at("pseudo")->parents == std::vector<std::string>{a.at("B")->hash});
  CHECK(a.at("C")->parents.at(0) == a.at("pseudo")->hash);
  CHECK(a.at("D")->parents == std::vector<std::string>{a.at("C")->hash});
  CHECK(a.at("classic-C")->stage == "classic-ST");

  // one row per requested variant
  std::vector<std::string> stages;
  for (const auto& r : first.records) stages.push_back(r.stage + (r.variant.count("base") ? ":" + r.variant.at("base") : ""));
  CHECK(stages == std::vector<std::string>{"B", "C", "D", "baseline", "classic-ST:base", "classic-ST:A",
                                           "classic-ST:C"});

  for (const auto& [name, art] : a) {
    INFO(name);
    CHECK(std::filesystem::exists(art->dir / "DONE"));
    CHECK(std::filesystem::exists(art->dir / "config.json"));
    CHECK(std::filesystem::exists(art->dir / "metrics.json"));
    CHECK(std::filesystem::exists(art->dir / (name == "pseudo" ? "pseudo.jsonl" : "checkpoint.bin")));
  }
  CHECK(read_metrics_jsonl(dir / "metrics.jsonl") == first.records);

  // a new process over the same store recomputes nothing
  ArtifactStore store(dir);
  RunContext ctx(store);
  auto again = run_full_pipeline(ctx, c);
  CHECK(again.records == first.records);
  for (const char* s : {"init", "A", "B", "pseudo", "C", "D", "baseline", "classic-ST"}) CHECK(store.runs(s) == 0);
  CHECK(sha256_hex(*again.artifacts.at("D")->checkpoint) == sha256_hex(*a.at("D")->checkpoint));
  CHECK(*again.artifacts.at("pseudo")->records == *a.at("pseudo")->records);
  CHECK(read_metrics_jsonl(dir / "metrics.jsonl").size() == first.records.size());
}

TEST_CASE("the pipeline is deterministic") {
  auto c = small_config(TaskKind::ner, 5);
  ArtifactStore s1, s2;
  RunContext ctx1(s1), ctx2(s2);
  auto r1 = run_full_pipeline(ctx1, c);
  auto r2 = run_full_pipeline(ctx2, c);
  CHECK(sha256_hex(*r1.artifacts.at("D")->checkpoint) == sha256_hex(*r2.artifacts.at("D")->checkpoint));
  CHECK(r1.records == r2.records);
  CHECK(r1.records.back().metric == "span_f1");
}

TEST_CASE("stage failures carry the stage tag") {
  auto c = small_config();
  ArtifactStore store;
  RunContext ctx(store, [](const std::string& stage, const TrainBatch&) {
    if (stage == "A") throw std::runtime_error("boom");
  });
  try {
    run_full_pipeline(ctx, c);
    FAIL("expected StageError");
  } catch (const StageError& e) {
    CHECK(e.stage() == "A");
  }
}

TEST_CASE("2x2 loss/input grid: three cells, one skip, one step-1 run") {
  auto c = small_config();
  c.grid.loss = {LossVariant::LogitsKL_plus_MLM, LossVariant::LogitsKL_only};
  c.grid.input = {InputVariant::Masked, InputVariant::NoMask};
  ArtifactStore store;
  RunContext ctx(store);
  auto g = run_ablation_grid(ctx, c, {"loss", "input"});
  CHECK(g.cells.size() == 4);
  CHECK(g.executed() == 3);
  CHECK(g.skipped() == 1);
  for (const auto& cell : g.cells)
    if (!cell.record) {
      CHECK(*cell.loss == LossVariant::LogitsKL_plus_MLM);
      CHECK(*cell.input == InputVariant::NoMask);
      CHECK(!cell.skip_reason.empty());
    }
  CHECK(store.runs("A") == 1);
  CHECK(store.runs("B") == 1);
  CHECK(store.runs("pseudo") == 1);
  CHECK(store.runs("C") == 3);
  CHECK(store.runs("D") == 3);

  auto table = render_grid_table(g);
  CHECK(table.find("| D LogitsKL_plus_MLM/Masked |") != std::string::npos);
  CHECK(table.find("| D LogitsKL_only/NoMask |") != std::string::npos);
  CHECK(table.find("LogitsKL_plus_MLM/NoMask") == std::string::npos);
  CHECK_THROWS_AS(run_ablation_grid(ctx, c, {"depth"}), ConfigError);
}

TEST_CASE("grid over lineages and labeled sizes") {
  auto c = small_config();
  c.grid.lineage = {"baseline", "B", "D", "classic-A"};
  c.grid.labeled = {40, 120};
  ArtifactStore store;
  RunContext ctx(store);
  auto g = run_ablation_grid(ctx, c, {"lineage", "labeled"});
  CHECK(g.executed() == 8);
  CHECK(store.runs("A") == 1);
  CHECK(store.runs("B") == 2);
  auto table = render_grid_table(g, false);
  CHECK(table.find("| Method | l=40 | l=120 |") != std::string::npos);
}
