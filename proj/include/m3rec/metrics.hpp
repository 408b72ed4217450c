// Copyright 2026 the m3rec authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "m3rec/errors.hpp"

namespace m3rec {

// One evaluation case: a (full or top-n) ranking plus the single ground truth.
struct RankedCase {
  std::vector<std::uint32_t> ranked;
  std::uint32_t truth = 0;
};

// 1-based position of the truth, or nullopt when it is not in the ranking.
inline std::optional<std::size_t> rank_of_truth(const RankedCase& c) {
  for (std::size_t i = 0; i < c.ranked.size(); ++i)
    if (c.ranked[i] == c.truth) return i + 1;
  return std::nullopt;
}

namespace detail {

inline void check_cases(std::span<const RankedCase> cases, std::size_t n) {
  if (cases.empty()) throw ConfigError("metrics: empty case set");
  if (n < 1) throw ConfigError("metrics: n must be >= 1");
}

}  // namespace detail

// Fraction of cases whose truth ranks within the top n.
inline double hr_at_n(std::span<const RankedCase> cases, std::size_t n) {
  detail::check_cases(cases, n);
  std::size_t hits = 0;
  for (const RankedCase& c : cases) {
    const auto r = rank_of_truth(c);
    if (r && *r <= n) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(cases.size());
}

// Mean of 1/rank for ranks within n, else 0.
inline double mrr_at_n(std::span<const RankedCase> cases, std::size_t n) {
  detail::check_cases(cases, n);
  double sum = 0.0;
  for (const RankedCase& c : cases) {
    const auto r = rank_of_truth(c);
    if (r && *r <= n) sum += 1.0 / static_cast<double>(*r);
  }
  return sum / static_cast<double>(cases.size());
}

// Single ground truth per case, so the ideal DCG is 1 and the per-case gain
// is 1/log2(rank+1) for ranks within n, else 0.
inline double ndcg_at_n(std::span<const RankedCase> cases, std::size_t n) {
  detail::check_cases(cases, n);
  double sum = 0.0;
  for (const RankedCase& c : cases) {
    const auto r = rank_of_truth(c);
    if (r && *r <= n) sum += 1.0 / std::log2(static_cast<double>(*r) + 1.0);
  }
  return sum / static_cast<double>(cases.size());
}

// ---------------------------------------------------------------------------
// Top-3 share: for each metric instance (column), the three best settings are
// marked; ties at the third-place boundary all count. A setting's share is
// its marking count over all markings, so shares sum to 1.
// ---------------------------------------------------------------------------

inline std::vector<double> top3_share(
    const std::vector<std::string>& settings,
    const std::vector<std::vector<double>>& values /* [setting][instance] */) {
  if (settings.size() < 3)
    throw ConfigError("top3_share: need at least 3 settings, got " +
                      std::to_string(settings.size()));
  if (values.size() != settings.size())
    throw ConfigError("top3_share: values rows do not match settings");
  const std::size_t instances = values.front().size();
  if (instances == 0) throw ConfigError("top3_share: empty result table");
  for (const auto& row : values)
    if (row.size() != instances)
      throw ConfigError("top3_share: ragged result table");

  std::vector<double> marks(settings.size(), 0.0);
  double total = 0.0;
  for (std::size_t col = 0; col < instances; ++col) {
    std::vector<double> vals(settings.size());
    for (std::size_t s = 0; s < settings.size(); ++s) vals[s] = values[s][col];
    std::vector<double> sorted = vals;
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    const double boundary = sorted[2];  // third-best value; ties all count
    for (std::size_t s = 0; s < settings.size(); ++s) {
      if (vals[s] >= boundary) {
        marks[s] += 1.0;
        total += 1.0;
      }
    }
  }
  for (double& m : marks) m /= total;
  return marks;
}

// ---------------------------------------------------------------------------
// Tab-separated report rows: setting, task, metric, n, value.
// ---------------------------------------------------------------------------

struct MetricRow {
  std::string setting;
  std::string task;
  std::string metric;
  std::size_t n = 0;
  double value = 0.0;
};

struct MetricReport {
  std::vector<MetricRow> rows;
  std::size_t case_count = 0;

  void emit_tsv(std::ostream& os) const {
    os << "setting\ttask\tmetric\tn\tvalue\n";
    char buf[64];
    for (const MetricRow& r : rows) {
      std::snprintf(buf, sizeof(buf), "%.6f", r.value);
      os << r.setting << "\t" << r.task << "\t" << r.metric << "\t" << r.n << "\t"
         << buf << "\n";
    }
  }
};

inline MetricReport compute_metrics(std::span<const RankedCase> cases,
                                    std::span<const std::size_t> ns,
                                    const std::string& setting,
                                    const std::string& task) {
  MetricReport rep;
  rep.case_count = cases.size();
  for (std::size_t n : ns) {
    rep.rows.push_back({setting, task, "HR", n, hr_at_n(cases, n)});
    rep.rows.push_back({setting, task, "MRR", n, mrr_at_n(cases, n)});
    rep.rows.push_back({setting, task, "NDCG", n, ndcg_at_n(cases, n)});
  }
  return rep;
}

}  // namespace m3rec
