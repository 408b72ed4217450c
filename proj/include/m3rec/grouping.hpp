// Copyright 2026 the m3rec authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "m3rec/datagen.hpp"
#include "m3rec/model.hpp"
#include "m3rec/rng.hpp"

namespace m3rec {

// ---------------------------------------------------------------------------
// User features for grouping: learned embedding ++ per-task activity counts,
// standardized per coordinate over the population. Zero-variance coordinates
// pass through as zeros.
// ---------------------------------------------------------------------------

struct UserFeature {
  std::uint32_t user = 0;
  std::vector<double> vec;
};

inline std::vector<UserFeature> build_user_features(const M3RecModel& m,
                                                    const Dataset& ds) {
  const std::size_t dim = m.dim + ds.tasks.size();
  std::vector<UserFeature> out(ds.user_count);
  for (std::uint32_t u = 0; u < ds.user_count; ++u) {
    out[u].user = u;
    out[u].vec.resize(dim);
    for (std::size_t k = 0; k < m.dim; ++k) out[u].vec[k] = m.user_table.value(u, k);
    for (std::size_t ti = 0; ti < ds.tasks.size(); ++ti)
      out[u].vec[m.dim + ti] = static_cast<double>(ds.sequences[ti][u].size());
  }
  // standardize each coordinate (population variance)
  for (std::size_t k = 0; k < dim; ++k) {
    double mean = 0.0;
    for (const auto& f : out) mean += f.vec[k];
    mean /= static_cast<double>(out.size());
    double var = 0.0;
    for (const auto& f : out) var += (f.vec[k] - mean) * (f.vec[k] - mean);
    var /= static_cast<double>(out.size());
    const double sd = std::sqrt(var);
    for (auto& f : out) f.vec[k] = sd > 0.0 ? (f.vec[k] - mean) / sd : 0.0;
  }
  return out;
}

// ---------------------------------------------------------------------------
// k-means with k-means++ seeding and Lloyd iterations to an assignment
// fixpoint. Empty clusters are repaired by stealing the point farthest from
// its current centroid. Deterministic per seed.
// ---------------------------------------------------------------------------

struct KmeansResult {
  std::vector<std::uint32_t> assignment;        // point -> cluster
  std::vector<std::vector<double>> centroids;   // k x dim
  double objective = 0.0;                       // sum of squared distances
  std::size_t iterations = 0;
};

namespace detail {

inline double sqdist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

}  // namespace detail

inline KmeansResult kmeans(const std::vector<std::vector<double>>& points,
                           std::size_t k, std::uint64_t seed,
                           std::size_t max_iter = 100) {
  if (points.empty()) throw ConfigError("kmeans: empty feature set");
  if (k < 1) throw ConfigError("kmeans: k must be >= 1");
  if (k > points.size())
    throw ConfigError("kmeans: k=" + std::to_string(k) + " exceeds population " +
                      std::to_string(points.size()));
  if (max_iter < 1) throw ConfigError("kmeans: max_iter must be >= 1");
  const std::size_t n = points.size();
  const std::size_t dim = points.front().size();
  Rng rng = Rng(seed).derive("kmeans");

  // k-means++ seeding
  std::vector<std::vector<double>> centroids;
  centroids.reserve(k);
  centroids.push_back(points[rng.below(n)]);
  std::vector<double> mind(n, std::numeric_limits<double>::infinity());
  while (centroids.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      mind[i] = std::min(mind[i], detail::sqdist(points[i], centroids.back()));
      total += mind[i];
    }
    std::size_t chosen = 0;
    if (total > 0.0) {
      double u = rng.uniform01() * total;
      for (std::size_t i = 0; i < n; ++i) {
        u -= mind[i];
        if (u <= 0.0) {
          chosen = i;
          break;
        }
        chosen = i;
      }
    } else {
      chosen = rng.below(n);  // all points coincide with a centroid
    }
    centroids.push_back(points[chosen]);
  }

  KmeansResult res;
  res.assignment.assign(n, 0);
  auto assign_all = [&]() {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double bd = detail::sqdist(points[i], centroids[0]);
      for (std::size_t c = 1; c < k; ++c) {
        const double d = detail::sqdist(points[i], centroids[c]);
        if (d < bd) {
          bd = d;
          best = c;
        }
      }
      if (res.assignment[i] != best) {
        res.assignment[i] = static_cast<std::uint32_t>(best);
        changed = true;
      }
    }
    return changed;
  };

  assign_all();
  for (std::size_t it = 0; it < max_iter; ++it) {
    res.iterations = it + 1;
    // recompute centroids
    std::vector<std::vector<double>> sums(k, std::vector<double>(dim, 0.0));
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++counts[res.assignment[i]];
      for (std::size_t d = 0; d < dim; ++d) sums[res.assignment[i]][d] += points[i][d];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) {
        // steal the point farthest from its centroid among multi-point clusters
        std::size_t far = n;
        double fd = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
          if (counts[res.assignment[i]] <= 1) continue;
          const double d = detail::sqdist(points[i], centroids[res.assignment[i]]);
          if (d > fd) {
            fd = d;
            far = i;
          }
        }
        if (far < n) {
          const std::uint32_t old = res.assignment[far];
          --counts[old];
          for (std::size_t d = 0; d < dim; ++d) sums[old][d] -= points[far][d];
          res.assignment[far] = static_cast<std::uint32_t>(c);
          counts[c] = 1;
          sums[c] = points[far];
        }
      }
      if (counts[c] > 0)
        for (std::size_t d = 0; d < dim; ++d)
          centroids[c][d] = sums[c][d] / static_cast<double>(counts[c]);
    }
    if (!assign_all()) break;
  }
  res.centroids = std::move(centroids);
  res.objective = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    res.objective += detail::sqdist(points[i], res.centroids[res.assignment[i]]);
  return res;
}

inline std::size_t default_group_count(std::uint32_t users) {
  return static_cast<std::size_t>(
      std::ceil(std::sqrt(static_cast<double>(users) / 2.0)));
}

// ---------------------------------------------------------------------------
// Groups
// ---------------------------------------------------------------------------

struct UserGroup {
  std::uint32_t group_id = 0;
  std::vector<std::uint32_t> members;  // non-empty; every user in exactly one group
};

inline std::vector<UserGroup> groups_from_assignment(
    std::span<const std::uint32_t> assignment) {
  std::map<std::uint32_t, UserGroup> by_id;
  for (std::uint32_t u = 0; u < assignment.size(); ++u) {
    UserGroup& g = by_id[assignment[u]];
    g.group_id = assignment[u];
    g.members.push_back(u);
  }
  std::vector<UserGroup> out;
  out.reserve(by_id.size());
  for (auto& [id, g] : by_id) out.push_back(std::move(g));
  return out;
}

// Groups a trained model would use: k-means over standardized user features.
inline std::vector<UserGroup> build_groups(const M3RecModel& m, const Dataset& ds,
                                           std::size_t k, std::uint64_t seed) {
  const auto feats = build_user_features(m, ds);
  std::vector<std::vector<double>> pts(feats.size());
  for (std::size_t i = 0; i < feats.size(); ++i) pts[i] = feats[i].vec;
  if (k == 0) k = default_group_count(ds.user_count);
  const KmeansResult km = kmeans(pts, k, seed);
  return groups_from_assignment(km.assignment);
}

// ---------------------------------------------------------------------------
// Attention aggregation of member representations (d x 1 each, as rows of an
// m x d matrix):
//   e_i   = relu(We x_i + b_vec)
//   s_i   = Wb e_i + b_scalar
//   beta  = softmax(s)
//   p_g   = relu(Wp sum_i beta_i x_i)
// ---------------------------------------------------------------------------

inline Var group_embed(Var member_matrix, const GroupAggParams& gp) {
  Tape& t = *member_matrix.tape;
  const Matrix& mv = member_matrix.value();
  if (mv.rows() < 1) throw ConfigError("group_embed: empty member list");
  Var e = relu(add_bias_rows(matmul_nt(member_matrix, t.param(gp.member_w)),
                             t.param(gp.member_bias)));
  // scalar bias broadcasts down the m x 1 score column
  Var scores = add_bias_rows(matmul_nt(e, t.param(gp.score_w)), t.param(gp.score_bias));
  Var beta = softmax(scores);
  Var weighted = matmul_tn(member_matrix, beta);  // d x 1
  return relu(matmul(t.param(gp.agg_proj), weighted));
}

// Softmax weights over members, exposed for invariant checks.
inline Matrix group_attention_weights(const M3RecModel& m,
                                      std::span<const std::uint32_t> members) {
  Tape t;
  Var x = take_rows(t.param(m.user_table), members);
  Var e = relu(add_bias_rows(matmul_nt(x, t.param(m.group.member_w)),
                             t.param(m.group.member_bias)));
  Var scores = add_bias_rows(matmul_nt(e, t.param(m.group.score_w)),
                             t.param(m.group.score_bias));
  return softmax(scores).value();
}

// ---------------------------------------------------------------------------
// Merging member sequences: all members' main-task actions in global
// timestamp order; ties broken by (user id, original position).
// ---------------------------------------------------------------------------

inline ActionSequence merge_group_sequence(
    std::span<const ActionSequence* const> member_seqs, std::uint32_t group_id = 0) {
  struct Tagged {
    Action a;
    std::uint32_t user;
    std::size_t pos;
  };
  std::vector<Tagged> all;
  for (const ActionSequence* s : member_seqs) {
    if (!s) continue;
    for (std::size_t j = 0; j < s->actions.size(); ++j)
      all.push_back({s->actions[j], s->user, j});
  }
  if (all.empty())
    throw ConfigError("merge_group_sequence: all member sequences are empty");
  std::stable_sort(all.begin(), all.end(), [](const Tagged& x, const Tagged& y) {
    if (x.a.time != y.a.time) return x.a.time < y.a.time;
    if (x.user != y.user) return x.user < y.user;
    return x.pos < y.pos;
  });
  ActionSequence out;
  out.user = group_id;
  out.task_id = member_seqs.front() ? member_seqs.front()->task_id : "";
  out.actions.reserve(all.size());
  for (const Tagged& tg : all) out.actions.push_back(tg.a);
  return out;
}

inline ActionSequence merged_main_sequence(const Dataset& ds,
                                           std::span<const std::uint32_t> members,
                                           std::uint32_t group_id = 0) {
  const std::size_t main_ti = [&] {
    for (std::size_t i = 0; i < ds.tasks.size(); ++i)
      if (ds.tasks[i].role == TaskRole::main) return i;
    throw ConfigError("dataset has no main task");
  }();
  std::vector<const ActionSequence*> seqs;
  seqs.reserve(members.size());
  for (std::uint32_t u : members) {
    if (u >= ds.user_count)
      throw LookupError("group member " + std::to_string(u) + " unknown");
    seqs.push_back(&ds.sequences[main_ti][u]);
  }
  return merge_group_sequence(seqs, group_id);
}

// ---------------------------------------------------------------------------
// Group-level scoring: run the main-task unit over the merged sequence, add
// the group embedding to the projected sequence embedding, score against the
// item table. The additive fusion is isolated here.
// ---------------------------------------------------------------------------

inline Var group_forward(Tape& t, const M3RecModel& m,
                         std::span<const std::uint32_t> merged_ids,
                         std::span<const std::uint32_t> members) {
  const std::size_t main_ti = [&] {
    for (std::size_t i = 0; i < m.tasks.size(); ++i)
      if (m.tasks[i].role == TaskRole::main) return i;
    throw ConfigError("model has no main task");
  }();
  const TaskModel& tm = m.task_models[main_ti];
  const TaskSpec& ts = m.tasks[main_ti];
  auto input = detail::tail(merged_ids, m.max_seq_len);
  detail::check_ids(m, ts, input);
  for (std::uint32_t u : members)
    if (u >= m.user_count)
      throw LookupError("group member " + std::to_string(u) + " outside user table");
  SequenceGraph g = build_graph(input);
  const Parameter& table = m.vocab_table(ts.vocab_kind);
  Var h0 = take_rows(t.param(table), g.nodes);
  Var h = propagate(g, h0, tm.unit);
  SequenceEmbedding emb = readout(h, g.last_node_index, tm.readout);
  Var members_x = take_rows(t.param(m.user_table), members);
  Var pg = group_embed(members_x, m.group);
  Var q = add(matmul(t.param(tm.readout.out_proj), vconcat(emb.global, emb.last)), pg);
  return matmul(t.param(table), q);
}

inline std::vector<std::pair<std::uint32_t, double>> group_recommend(
    const M3RecModel& m, const Dataset& ds, std::span<const std::uint32_t> members,
    std::size_t n, std::uint32_t group_id = 0) {
  if (n < 1) throw ConfigError("group_recommend: n must be >= 1");
  if (members.empty()) throw ConfigError("group_recommend: empty group");
  ActionSequence merged = merged_main_sequence(ds, members, group_id);
  const auto ids = merged.ids();
  Tape t;
  Var logits = group_forward(t, m, ids, members);
  return rank_logits(logits.value(), n);
}

// One group training pair: members plus the merged-prefix -> next-item pair.
struct GroupExample {
  std::vector<std::uint32_t> members;
  std::vector<std::uint32_t> input;
  std::uint32_t target = 0;
};

inline Var group_task_loss(Tape& t, const M3RecModel& m,
                           std::span<const GroupExample> batch) {
  if (batch.empty()) throw ConfigError("group_task_loss: empty batch");
  std::vector<Var> losses;
  losses.reserve(batch.size());
  for (const GroupExample& ex : batch) {
    if (ex.target >= m.item_count)
      throw LookupError("group target " + std::to_string(ex.target) +
                        " outside item vocabulary");
    Var logits = group_forward(t, m, ex.input, ex.members);
    losses.push_back(softmax_cross_entropy(logits, ex.target));
  }
  if (losses.size() == 1) return losses.front();
  return add_all(losses);
}

// ---------------------------------------------------------------------------
// Group assignment file: stable-sorted `group_id<TAB>user_id` lines.
// ---------------------------------------------------------------------------

inline void save_groups(const std::vector<UserGroup>& groups, const std::string& path) {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> rows;
  for (const UserGroup& g : groups)
    for (std::uint32_t u : g.members) rows.emplace_back(g.group_id, u);
  std::stable_sort(rows.begin(), rows.end());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw ConfigError("save_groups: cannot open " + path);
  for (const auto& [g, u] : rows) os << g << "\t" << u << "\n";
}

inline std::vector<UserGroup> load_groups(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("load_groups: cannot open " + path);
  std::map<std::uint32_t, UserGroup> by_id;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::uint32_t g = 0, u = 0;
    if (!(ls >> g >> u))
      throw ParseError("groups file line " + std::to_string(lineno) + ": malformed");
    by_id[g].group_id = g;
    by_id[g].members.push_back(u);
  }
  std::vector<UserGroup> out;
  out.reserve(by_id.size());
  for (auto& [id, g] : by_id) out.push_back(std::move(g));
  return out;
}

}  // namespace m3rec
