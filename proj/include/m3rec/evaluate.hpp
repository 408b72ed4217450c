// Copyright 2026 the m3rec authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "m3rec/datagen.hpp"
#include "m3rec/metrics.hpp"
#include "m3rec/model.hpp"

namespace m3rec {

// Rankings for every held-out test case of one task, truncated to depth n.
inline std::vector<RankedCase> ranked_cases_for_task(
    const M3RecModel& m, std::span<const TestCase> cases, std::size_t task_index,
    const std::string& task_id, std::size_t depth) {
  std::vector<RankedCase> out;
  const std::size_t model_ti = m.task_index(task_id);
  for (const TestCase& tc : cases) {
    if (tc.task_index != task_index) continue;
    Tape t;
    Var logits = forward_task(t, m, model_ti, tc.input);
    auto ranked = rank_logits(logits.value(), depth);
    RankedCase rc;
    rc.truth = tc.truth;
    rc.ranked.reserve(ranked.size());
    for (const auto& [id, score] : ranked) rc.ranked.push_back(id);
    out.push_back(std::move(rc));
  }
  return out;
}

// Leave-last-out evaluation of every model task against a dataset's held-out
// targets; one report row per (task, metric, n).
inline MetricReport evaluate(const M3RecModel& m, const Dataset& ds,
                             std::span<const std::size_t> ns,
                             const std::string& setting = "model") {
  if (ns.empty()) throw ConfigError("evaluate: empty n list");
  const SplitResult sp = split(ds);
  std::size_t depth = 0;
  for (std::size_t n : ns) depth = std::max(depth, n);

  MetricReport rep;
  for (const TaskSpec& ts : m.tasks) {
    const std::size_t ds_ti = ds.task_index(ts.task_id);
    auto cases = ranked_cases_for_task(m, sp.test, ds_ti, ts.task_id, depth);
    if (cases.empty()) continue;
    MetricReport one = compute_metrics(cases, ns, setting, ts.task_id);
    rep.case_count += cases.size();
    rep.rows.insert(rep.rows.end(), one.rows.begin(), one.rows.end());
  }
  if (rep.rows.empty()) throw ConfigError("evaluate: no task produced test cases");
  return rep;
}

}  // namespace m3rec
