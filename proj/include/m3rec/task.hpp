// Copyright 2026 the m3rec authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "m3rec/errors.hpp"

namespace m3rec {

// Which shared vocabulary a task predicts over.
enum class VocabKind { item, category, user };

enum class TaskRole { main, auxiliary };

// One prediction task: an action sequence type plus the vocabulary it scores
// against and its weight in the joint loss.
struct TaskSpec {
  std::string task_id;
  VocabKind vocab_kind = VocabKind::item;
  TaskRole role = TaskRole::auxiliary;
  double weight = 1.0;
};

inline std::string to_string(VocabKind k) {
  switch (k) {
    case VocabKind::item: return "item";
    case VocabKind::category: return "category";
    case VocabKind::user: return "user";
  }
  return "item";
}

inline std::string to_string(TaskRole r) {
  return r == TaskRole::main ? "main" : "auxiliary";
}

inline VocabKind vocab_kind_from(std::string_view s) {
  if (s == "item") return VocabKind::item;
  if (s == "category") return VocabKind::category;
  if (s == "user") return VocabKind::user;
  throw ParseError("unknown vocab kind: " + std::string(s));
}

inline TaskRole task_role_from(std::string_view s) {
  if (s == "main") return TaskRole::main;
  if (s == "auxiliary") return TaskRole::auxiliary;
  throw ParseError("unknown task role: " + std::string(s));
}

// The four sequence types the synthetic world produces. Library code accepts
// arbitrary registries; these are the conventional ids.
inline TaskSpec standard_task(std::string_view id) {
  if (id == "download") return {"download", VocabKind::item, TaskRole::main, 1.0};
  if (id == "play") return {"play", VocabKind::item, TaskRole::auxiliary, 1.0};
  if (id == "category") return {"category", VocabKind::category, TaskRole::auxiliary, 1.0};
  if (id == "friend") return {"friend", VocabKind::user, TaskRole::auxiliary, 1.0};
  throw ConfigError("unknown task id: " + std::string(id) +
                    " (expected download|play|category|friend)");
}

inline std::size_t find_task_index(const std::vector<TaskSpec>& tasks,
                                   std::string_view id) {
  for (std::size_t i = 0; i < tasks.size(); ++i)
    if (tasks[i].task_id == id) return i;
  throw LookupError("unknown task: " + std::string(id));
}

}  // namespace m3rec
