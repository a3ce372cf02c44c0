// Copyright 2026 The selftrain Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Hash-keyed, write-once artifact store. Each artifact lives in
// <root>/<stage>-<hash prefix>/ with checkpoint.bin, config.json,
// provenance.json, metrics.json, pseudo.jsonl (pseudo-label sets only) and a
// DONE marker written last. An empty root keeps artifacts in memory only.

#include <spdlog/spdlog.h>

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <unistd.h>

#include "selftrain/autodiff/checkpoint.hpp"
#include "selftrain/framework/config.hpp"
#include "selftrain/framework/pseudo.hpp"

namespace selftrain {

struct StageArtifact {
  std::string stage;  // init, A, B, C, D, baseline, classic-ST, pseudo
  std::string hash;
  std::vector<std::string> parents;
  nlohmann::json key;         // what the hash covers
  nlohmann::json provenance;  // parents, init digest, training summary
  std::string metric;         // accuracy | span_f1, empty if not evaluated
  std::optional<double> score;
  std::shared_ptr<const std::string> checkpoint;
  std::shared_ptr<const std::vector<PseudoLabelRecord>> records;
  std::filesystem::path dir;
};

using ArtifactPtr = std::shared_ptr<const StageArtifact>;

class ArtifactStore {
 public:
  explicit ArtifactStore(std::filesystem::path root = {}) : root_(std::move(root)) {
    if (!root_.empty()) std::filesystem::create_directories(root_);
  }

  const std::filesystem::path& root() const { return root_; }

  std::filesystem::path dir_for(const std::string& stage, const std::string& hash) const {
    return root_.empty() ? std::filesystem::path{} : root_ / (stage + "-" + hash.substr(0, 16));
  }

  // Memory first, then a completed directory on disk.
  ArtifactPtr find(const std::string& stage, const std::string& hash) {
    if (auto it = mem_.find(hash); it != mem_.end()) {
      ++hits_[stage];
      return it->second;
    }
    if (root_.empty()) return nullptr;
    const auto dir = dir_for(stage, hash);
    if (!std::filesystem::exists(dir / "DONE")) return nullptr;
    auto a = load(dir);
    if (a->hash != hash) throw FormatError("artifact " + dir.string() + " holds hash " + a->hash);
    ++hits_[stage];
    mem_[hash] = a;
    return a;
  }

  // Stores `a` unless an artifact with the same hash already exists, in which
  // case the existing one is returned unchanged.
  ArtifactPtr put(StageArtifact a) {
    if (auto it = mem_.find(a.hash); it != mem_.end()) return it->second;
    ++runs_[a.stage];
    if (!root_.empty()) {
      a.dir = dir_for(a.stage, a.hash);
      if (!std::filesystem::exists(a.dir / "DONE")) write(a);
    }
    auto p = std::make_shared<const StageArtifact>(std::move(a));
    mem_[p->hash] = p;
    return p;
  }

  // Stages computed (not served from cache) by this store instance.
  std::size_t runs(const std::string& stage) const {
    auto it = runs_.find(stage);
    return it == runs_.end() ? 0 : it->second;
  }
  std::size_t hits(const std::string& stage) const {
    auto it = hits_.find(stage);
    return it == hits_.end() ? 0 : it->second;
  }

  // Drops the in-memory copies (disk artifacts stay).
  void forget() { mem_.clear(); }

 private:
  static void write_text(const std::filesystem::path& p, const std::string& s) { write_file_bytes(p, s); }

  void write(const StageArtifact& a) const {
    auto tmp = a.dir;
    tmp += ".tmp-" + std::to_string(::getpid());
    std::filesystem::remove_all(tmp);
    std::filesystem::create_directories(tmp);
    if (a.checkpoint) write_file_bytes(tmp / "checkpoint.bin", *a.checkpoint);
    if (a.records) write_pseudo_jsonl(tmp / "pseudo.jsonl", *a.records, a.provenance.at("task").get<TaskKind>());
    write_text(tmp / "config.json", a.key.dump(2) + "\n");
    nlohmann::json prov = a.provenance;
    prov["stage"] = a.stage;
    prov["hash"] = a.hash;
    prov["parents"] = a.parents;
    write_text(tmp / "provenance.json", prov.dump(2) + "\n");
    nlohmann::json m = nlohmann::json::object();
    if (a.score) m = {{"metric", a.metric}, {"value", *a.score}};
    write_text(tmp / "metrics.json", m.dump(2) + "\n");
    write_text(tmp / "DONE", "");
    std::error_code ec;
    std::filesystem::rename(tmp, a.dir, ec);
    if (ec) {
      // another writer finished first; keep its copy
      std::filesystem::remove_all(tmp);
      if (!std::filesystem::exists(a.dir / "DONE")) throw FormatError("cannot publish artifact " + a.dir.string());
    }
  }

  static ArtifactPtr load(const std::filesystem::path& dir) {
    auto a = std::make_shared<StageArtifact>();
    a->dir = dir;
    a->key = nlohmann::json::parse(read_file_bytes(dir / "config.json"));
    auto prov = nlohmann::json::parse(read_file_bytes(dir / "provenance.json"));
    a->stage = prov.at("stage").get<std::string>();
    a->hash = prov.at("hash").get<std::string>();
    a->parents = prov.at("parents").get<std::vector<std::string>>();
    a->provenance = prov;
    auto m = nlohmann::json::parse(read_file_bytes(dir / "metrics.json"));
    if (m.contains("value")) {
      a->metric = m.at("metric").get<std::string>();
      a->score = m.at("value").get<double>();
    }
    if (std::filesystem::exists(dir / "checkpoint.bin"))
      a->checkpoint = std::make_shared<const std::string>(read_file_bytes(dir / "checkpoint.bin"));
    if (std::filesystem::exists(dir / "pseudo.jsonl"))
      a->records = std::make_shared<const std::vector<PseudoLabelRecord>>(read_pseudo_jsonl(
          dir / "pseudo.jsonl", prov.at("task").get<TaskKind>(), prov.at("cols").get<std::size_t>()));
    return a;
  }

  std::filesystem::path root_;
  std::map<std::string, ArtifactPtr> mem_;
  std::map<std::string, std::size_t> runs_, hits_;
};

}  // namespace selftrain
