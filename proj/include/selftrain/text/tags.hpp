// Copyright 2026 The selftrain Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "selftrain/core/error.hpp"

namespace selftrain {

// BIO tag inventory. Id 0 is "O"; entity type i owns B- at 1 + 2i and I- at
// 2 + 2i.
class TagSet {
 public:
  TagSet() : TagSet(std::vector<std::string>{}) {}

  explicit TagSet(std::vector<std::string> entity_types) : types_(std::move(entity_types)) {
    names_.push_back("O");
    for (const auto& t : types_) {
      names_.push_back("B-" + t);
      names_.push_back("I-" + t);
    }
    for (std::size_t i = 0; i < names_.size(); ++i) index_[names_[i]] = static_cast<int>(i);
  }

  std::size_t size() const noexcept { return names_.size(); }
  const std::vector<std::string>& entity_types() const noexcept { return types_; }
  const std::string& name(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= names_.size())
      throw IndexError("tag id " + std::to_string(id) + " out of range");
    return names_[static_cast<std::size_t>(id)];
  }

  int id(const std::string& tag) const {
    auto it = index_.find(tag);
    if (it == index_.end()) throw IndexError("unknown tag '" + tag + "'");
    return it->second;
  }

  static constexpr int outside() noexcept { return 0; }
  int begin_of(std::size_t type) const { return 1 + 2 * static_cast<int>(type); }
  int inside_of(std::size_t type) const { return 2 + 2 * static_cast<int>(type); }

  std::vector<int> ids(const std::vector<std::string>& tags) const {
    std::vector<int> out;
    out.reserve(tags.size());
    for (const auto& t : tags) out.push_back(id(t));
    return out;
  }

  std::vector<std::string> names(const std::vector<int>& ids) const {
    std::vector<std::string> out;
    out.reserve(ids.size());
    for (int i : ids) out.push_back(name(i));
    return out;
  }

  bool operator==(const TagSet& o) const { return types_ == o.types_; }

 private:
  std::vector<std::string> types_;
  std::vector<std::string> names_;
  std::unordered_map<std::string, int> index_;
};

// Strict BIO validity: every I-X continues a B-X or I-X of the same type.
inline bool is_valid_bio(const std::vector<std::string>& tags) {
  std::string open;
  for (const auto& t : tags) {
    if (t == "O") {
      open.clear();
    } else if (t.rfind("B-", 0) == 0) {
      open = t.substr(2);
    } else if (t.rfind("I-", 0) == 0) {
      if (open != t.substr(2)) return false;
    } else {
      return false;
    }
  }
  return true;
}

}  // namespace selftrain
