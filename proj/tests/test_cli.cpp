// Copyright 2026 The selftrain Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch_amalgamated.hpp>

#include <filesystem>
#include <sstream>

#include "selftrain/cli/cli.hpp"

using namespace selftrain;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "selftrain");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli_dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string fresh_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("selftrain_cli_" + name);
  std::filesystem::remove_all(p);
  return p.string();
}

const std::string kSmoke = SELFTRAIN_SOURCE_DIR "/configs/smoke.json";

}  // namespace

TEST_CASE("usage errors exit with 2") {
  auto r = cli({"frobnicate"});
  CHECK(r.code == 2);
  CHECK(r.err.find("Usage") != std::string::npos);
  CHECK(cli({}).code == 2);
  CHECK(cli({"report"}).code == 2);  // --in is required
  CHECK(cli({"--help"}).code == 0);
}

TEST_CASE("command failures exit with 1 and a diagnostic") {
  auto dir = fresh_dir("bad");
  std::filesystem::create_directories(dir);
  const auto cfg = dir + "/c.json";
  write_file_bytes(cfg, R"({"loss_variant": "LogitsKL_plus_MLM", "input_variant": "NoMask"})");
  auto r = cli({"pipeline", "--config", cfg, "--out", dir});
  CHECK(r.code == 1);
  CHECK(r.err.find("NoMask") != std::string::npos);
  CHECK(cli({"pipeline", "--config", dir + "/missing.json"}).code == 1);
}

TEST_CASE("gen-data writes the three corpora") {
  auto dir = fresh_dir("gen");
  auto r = cli({"gen-data", "--config", kSmoke, "--out", dir});
  REQUIRE(r.code == 0);
  for (const char* f : {"train.tsv", "test.tsv", "pool.tsv"}) CHECK(std::filesystem::exists(dir + "/" + f));
  CHECK(read_corpus(dir + "/train.tsv", TaskKind::classification).size() == 240);
  CHECK(read_corpus(dir + "/pool.tsv", TaskKind::classification).size() == 2000);
  CHECK(read_corpus(dir + "/test.tsv", TaskKind::classification).size() == 400);
}

TEST_CASE("pipeline prints the lineage table and resumes from the store") {
  auto dir = fresh_dir("pipeline");
  auto r = cli({"pipeline", "--config", kSmoke, "--out", dir});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("| Model-D |") != std::string::npos);
  CHECK(r.out.find("| Fine-tune only |") != std::string::npos);
  CHECK(r.out.find("| Classic ST upon Model-C |") != std::string::npos);
  auto again = cli({"pipeline", "--config", kSmoke, "--out", dir});
  CHECK(again.out == r.out);
  std::size_t manifests = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    manifests += e.path().filename().string().rfind("manifest-", 0) == 0;
  CHECK(manifests == 1);

  auto rep = cli({"report", "--table", "lineage", "--in", dir + "/metrics.jsonl"});
  CHECK(rep.code == 0);
  CHECK(r.out.find(rep.out) != std::string::npos);
  auto delta = cli({"report", "--table", "delta", "--in", dir + "/metrics.jsonl"});
  CHECK(delta.code == 0);
  CHECK(delta.out.find("| baseline | — |") != std::string::npos);
  auto abl = cli({"report", "--table", "ablation", "--in", dir + "/metrics.jsonl"});
  CHECK(abl.out.find("| D input=NoMask loss=LogitsKL_only |") != std::string::npos);

  // single stages reuse the pipeline's artifacts
  auto ev = cli({"eval", "--stage", "D", "--config", kSmoke, "--out", dir});
  CHECK(ev.code == 0);
  CHECK(ev.out.find("\"stage\":\"D\"") != std::string::npos);
  for (const char* cmd : {"pretrain", "finetune", "pseudo-label", "tsp", "self-train"}) {
    auto s = cli({cmd, "--config", kSmoke, "--out", dir});
    INFO(cmd << ": " << s.err);
    CHECK(s.code == 0);
    CHECK(s.out.find(dir) != std::string::npos);
  }
}

TEST_CASE("grid over loss and input: three runs and one skip") {
  auto dir = fresh_dir("grid");
  auto r = cli({"grid", "--axes", "loss,input", "--config", kSmoke, "--out", dir});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("3 cells run, 1 skipped") != std::string::npos);
  CHECK(r.out.find("skipped: NoMask") != std::string::npos);
  CHECK(cli({"grid", "--axes", "depth", "--config", kSmoke, "--out", dir}).code == 1);
}

TEST_CASE("overrides reach the config") {
  auto dir = fresh_dir("override");
  auto r = cli({"eval", "--stage", "B", "--config", kSmoke, "--out", dir, "--seed", "9", "--labeled", "60"});
  REQUIRE(r.code == 0);
  auto j = nlohmann::json::parse(r.out);
  CHECK(j.at("seed") == 9);
  CHECK(j.at("labeled_size") == 60);
  CHECK(j.at("timestamp") == "");
  auto nd = cli({"eval", "--stage", "B", "--config", kSmoke, "--out", dir, "--no-deterministic"});
  REQUIRE(nd.code == 0);
  CHECK(nlohmann::json::parse(nd.out).at("timestamp").get<std::string>().size() == 20);
}
