// Copyright 2026 the m3rec authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "m3rec/errors.hpp"
#include "m3rec/rng.hpp"
#include "m3rec/sequence.hpp"
#include "m3rec/task.hpp"

namespace m3rec {

struct LengthRange {
  std::uint32_t min_len = 1;
  std::uint32_t max_len = 1;
};

// Synthetic multi-sequence world. A single correlation knob rho drives all
// cross-task dependence: at rho=1 the play sequence replays earlier downloads,
// the category sequence is the download sequence mapped through the item
// category map, and friends come from the user's latent cluster; at rho=0 all
// tasks are independent uniform draws.
struct WorldConfig {
  std::uint32_t users = 100;
  std::uint32_t items = 50;
  std::uint32_t categories = 5;
  std::uint32_t friend_clusters = 4;
  LengthRange main_len{4, 10};
  LengthRange play_len{2, 4};
  LengthRange friend_len{3, 6};
  std::vector<std::string> task_ids{"download", "category", "play", "friend"};
  double rho = 0.7;
  std::uint64_t seed = 1;
  std::uint32_t latent_dim = 8;
  double affinity_sharpness = 4.0;  // softmax temperature of user-item preference

  void validate() const {
    if (users < 1 || items < 1 || categories < 1 || friend_clusters < 1)
      throw ConfigError("world: users/items/categories/friend_clusters must be >= 1");
    if (!(rho >= 0.0 && rho <= 1.0))
      throw ConfigError("world: rho must lie in [0, 1]");
    auto check_range = [](const LengthRange& r, const char* name) {
      if (r.min_len < 1 || r.min_len > r.max_len)
        throw ConfigError(std::string("world: invalid length range for ") + name);
    };
    check_range(main_len, "main_len");
    check_range(play_len, "play_len");
    check_range(friend_len, "friend_len");
    if (play_len.max_len > main_len.min_len)
      throw ConfigError("world: play_len max exceeds main_len min; "
                        "plays could not all follow a download");
    if (task_ids.empty()) throw ConfigError("world: task list is empty");
    bool has_main = false;
    for (const auto& id : task_ids) {
      (void)standard_task(id);
      if (id == "download") has_main = true;
    }
    if (!has_main) throw ConfigError("world: task list must contain download");
    if (latent_dim < 1) throw ConfigError("world: latent_dim must be >= 1");
  }
};

struct Dataset {
  std::uint32_t user_count = 0, item_count = 0, category_count = 0;
  std::uint32_t friend_clusters = 0;
  double rho = 0.0;
  std::uint64_t seed = 0;
  std::vector<std::uint32_t> item_category;  // item id -> category id
  std::vector<TaskSpec> tasks;
  // sequences[task_index][user]; may be empty for (task, user) pairs
  std::vector<std::vector<ActionSequence>> sequences;

  std::size_t task_index(std::string_view id) const { return find_task_index(tasks, id); }

  const ActionSequence& sequence(std::size_t task_idx, std::uint32_t user) const {
    if (task_idx >= sequences.size() || user >= user_count)
      throw LookupError("dataset: no sequence for task index " +
                        std::to_string(task_idx) + ", user " + std::to_string(user));
    return sequences[task_idx][user];
  }
};

// Which play actions were constructed from earlier downloads (per user, per
// play position). Test-only bookkeeping; never persisted.
struct GenTrace {
  std::vector<std::vector<bool>> play_from_download;
};

namespace detail {

inline std::uint32_t sample_softmax(const std::vector<double>& logits, Rng& rng) {
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double sum = 0.0;
  std::vector<double> w(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    w[i] = std::exp(logits[i] - mx);
    sum += w[i];
  }
  double u = rng.uniform01() * sum;
  for (std::size_t i = 0; i < w.size(); ++i) {
    u -= w[i];
    if (u <= 0.0) return static_cast<std::uint32_t>(i);
  }
  return static_cast<std::uint32_t>(w.size() - 1);
}

inline std::vector<std::vector<double>> latent_vectors(std::uint32_t n,
                                                       std::uint32_t dim,
                                                       Rng rng) {
  std::vector<std::vector<double>> out(n, std::vector<double>(dim));
  for (auto& v : out)
    for (double& x : v) x = rng.normal();
  return out;
}

}  // namespace detail

inline Dataset generate(const WorldConfig& cfg, GenTrace* trace = nullptr) {
  cfg.validate();
  const Rng root(cfg.seed);

  Dataset ds;
  ds.user_count = cfg.users;
  ds.item_count = cfg.items;
  ds.category_count = cfg.categories;
  ds.friend_clusters = cfg.friend_clusters;
  ds.rho = cfg.rho;
  ds.seed = cfg.seed;
  for (const auto& id : cfg.task_ids) ds.tasks.push_back(standard_task(id));
  ds.sequences.assign(ds.tasks.size(), std::vector<ActionSequence>(cfg.users));

  const auto user_latent = detail::latent_vectors(cfg.users, cfg.latent_dim,
                                                  root.derive("latent.user"));
  const auto item_latent = detail::latent_vectors(cfg.items, cfg.latent_dim,
                                                  root.derive("latent.item"));

  {
    Rng cat_rng = root.derive("item.category");
    ds.item_category.resize(cfg.items);
    for (std::uint32_t i = 0; i < cfg.items; ++i)
      ds.item_category[i] = static_cast<std::uint32_t>(cat_rng.below(cfg.categories));
  }

  std::vector<std::uint32_t> user_cluster(cfg.users);
  std::vector<std::vector<std::uint32_t>> cluster_members(cfg.friend_clusters);
  {
    Rng cl_rng = root.derive("user.cluster");
    for (std::uint32_t u = 0; u < cfg.users; ++u) {
      user_cluster[u] = static_cast<std::uint32_t>(cl_rng.below(cfg.friend_clusters));
      cluster_members[user_cluster[u]].push_back(u);
    }
  }

  const bool want_play = std::count(cfg.task_ids.begin(), cfg.task_ids.end(), "play") > 0;
  const bool want_category =
      std::count(cfg.task_ids.begin(), cfg.task_ids.end(), "category") > 0;
  const bool want_friend =
      std::count(cfg.task_ids.begin(), cfg.task_ids.end(), "friend") > 0;

  if (trace) trace->play_from_download.assign(cfg.users, {});

  for (std::uint32_t u = 0; u < cfg.users; ++u) {
    Rng rng = root.derive("user.seq").derive(u);

    // preference logits over items for this user
    std::vector<double> pref(cfg.items);
    for (std::uint32_t i = 0; i < cfg.items; ++i) {
      double dot = 0.0;
      for (std::uint32_t k = 0; k < cfg.latent_dim; ++k)
        dot += user_latent[u][k] * item_latent[i][k];
      pref[i] = cfg.affinity_sharpness * dot / std::sqrt(cfg.latent_dim);
    }

    auto next_time = [&rng](std::int64_t prev) {
      return prev + 1 + static_cast<std::int64_t>(rng.below(5));
    };

    // main (download) sequence
    ActionSequence& main_seq = ds.sequences[ds.task_index("download")][u];
    main_seq.user = u;
    main_seq.task_id = "download";
    {
      const std::uint32_t len = cfg.main_len.min_len +
          static_cast<std::uint32_t>(
              rng.below(cfg.main_len.max_len - cfg.main_len.min_len + 1));
      std::int64_t t = static_cast<std::int64_t>(rng.below(5));
      for (std::uint32_t j = 0; j < len; ++j) {
        t = next_time(t);
        main_seq.actions.push_back({detail::sample_softmax(pref, rng), t});
      }
    }

    // category sequence mirrors the download timeline
    if (want_category) {
      ActionSequence& cs = ds.sequences[ds.task_index("category")][u];
      cs.user = u;
      cs.task_id = "category";
      for (const Action& a : main_seq.actions) {
        std::uint32_t cat =
            rng.uniform01() < cfg.rho
                ? ds.item_category[a.id]
                : static_cast<std::uint32_t>(rng.below(cfg.categories));
        cs.actions.push_back({cat, a.time});
      }
    }

    // play sequence: an order-preserving random subsequence of the downloads
    // (per-element rho noise swaps in a uniform item); each play lands
    // strictly after the download it replays
    if (want_play) {
      ActionSequence& ps = ds.sequences[ds.task_index("play")][u];
      ps.user = u;
      ps.task_id = "play";
      const std::uint32_t len = cfg.play_len.min_len +
          static_cast<std::uint32_t>(
              rng.below(cfg.play_len.max_len - cfg.play_len.min_len + 1));
      std::vector<std::size_t> positions(main_seq.actions.size());
      std::iota(positions.begin(), positions.end(), std::size_t{0});
      rng.shuffle(positions);
      positions.resize(len);
      std::sort(positions.begin(), positions.end());
      std::vector<bool> prov;
      std::int64_t t = 0;
      for (std::size_t pos : positions) {
        t = std::max(t + 1, main_seq.actions[pos].time + 1 +
                               static_cast<std::int64_t>(rng.below(3)));
        const bool from_download = rng.uniform01() < cfg.rho;
        const std::uint32_t id = from_download
            ? main_seq.actions[pos].id
            : static_cast<std::uint32_t>(rng.below(cfg.items));
        ps.actions.push_back({id, t});
        prov.push_back(from_download);
      }
      if (trace) trace->play_from_download[u] = std::move(prov);
    }

    // friend sequence: correlated draws stay within the user's latent cluster
    if (want_friend) {
      ActionSequence& fs = ds.sequences[ds.task_index("friend")][u];
      fs.user = u;
      fs.task_id = "friend";
      const std::uint32_t len = cfg.friend_len.min_len +
          static_cast<std::uint32_t>(
              rng.below(cfg.friend_len.max_len - cfg.friend_len.min_len + 1));
      const auto& mates = cluster_members[user_cluster[u]];
      std::int64_t t = static_cast<std::int64_t>(rng.below(5));
      for (std::uint32_t j = 0; j < len; ++j) {
        t = next_time(t);
        std::uint32_t who = rng.uniform01() < cfg.rho
            ? mates[rng.below(mates.size())]
            : static_cast<std::uint32_t>(rng.below(cfg.users));
        fs.actions.push_back({who, t});
      }
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Leave-last-out split: per sequence per task, the final action becomes the
// held-out test target and the prefix stays in the training set. Length-1
// sequences contribute no test case.
// ---------------------------------------------------------------------------

struct TestCase {
  std::size_t task_index = 0;
  std::uint32_t user = 0;
  std::vector<std::uint32_t> input;
  std::uint32_t truth = 0;
};

struct SplitResult {
  Dataset train;
  std::vector<TestCase> test;
};

inline SplitResult split(const Dataset& ds) {
  SplitResult out;
  out.train = ds;
  for (std::size_t ti = 0; ti < ds.sequences.size(); ++ti) {
    for (std::uint32_t u = 0; u < ds.user_count; ++u) {
      const ActionSequence& s = ds.sequences[ti][u];
      if (s.size() < 2) continue;
      TestCase tc;
      tc.task_index = ti;
      tc.user = u;
      tc.truth = s.actions.back().id;
      tc.input.reserve(s.size() - 1);
      for (std::size_t j = 0; j + 1 < s.size(); ++j) tc.input.push_back(s.actions[j].id);
      out.test.push_back(std::move(tc));
      out.train.sequences[ti][u].actions.pop_back();
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Persistence: a dataset directory holds `manifest`, `actions.tsv`
// (task<TAB>user<TAB>id<TAB>t) and `item_categories.tsv`.
// ---------------------------------------------------------------------------

inline void save_dataset(const Dataset& ds, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  {
    std::ofstream os(fs::path(dir) / "manifest", std::ios::trunc);
    if (!os) throw ConfigError("save_dataset: cannot write manifest in " + dir);
    os << "m3rec-dataset 1\n";
    os << "users " << ds.user_count << "\n";
    os << "items " << ds.item_count << "\n";
    os << "categories " << ds.category_count << "\n";
    os << "friend_clusters " << ds.friend_clusters << "\n";
    os.precision(17);
    os << "rho " << ds.rho << "\n";
    os << "seed " << ds.seed << "\n";
    for (const TaskSpec& ts : ds.tasks)
      os << "task " << ts.task_id << " " << to_string(ts.vocab_kind) << " "
         << to_string(ts.role) << " " << ts.weight << "\n";
  }
  {
    std::ofstream os(fs::path(dir) / "actions.tsv", std::ios::trunc);
    for (std::size_t ti = 0; ti < ds.tasks.size(); ++ti)
      for (std::uint32_t u = 0; u < ds.user_count; ++u)
        for (const Action& a : ds.sequences[ti][u].actions)
          os << ds.tasks[ti].task_id << "\t" << u << "\t" << a.id << "\t" << a.time
             << "\n";
  }
  {
    std::ofstream os(fs::path(dir) / "item_categories.tsv", std::ios::trunc);
    for (std::uint32_t i = 0; i < ds.item_count; ++i)
      os << i << "\t" << ds.item_category[i] << "\n";
  }
}

inline Dataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  Dataset ds;
  {
    std::ifstream is(fs::path(dir) / "manifest");
    if (!is) throw ConfigError("load_dataset: cannot open manifest in " + dir);
    std::string line;
    std::size_t lineno = 1;
    if (!std::getline(is, line) || line != "m3rec-dataset 1")
      throw ParseError("manifest line 1: bad magic");
    while (std::getline(is, line)) {
      ++lineno;
      if (line.empty()) continue;
      std::istringstream ls(line);
      std::string key;
      ls >> key;
      if (key == "users") ls >> ds.user_count;
      else if (key == "items") ls >> ds.item_count;
      else if (key == "categories") ls >> ds.category_count;
      else if (key == "friend_clusters") ls >> ds.friend_clusters;
      else if (key == "rho") ls >> ds.rho;
      else if (key == "seed") ls >> ds.seed;
      else if (key == "task") {
        TaskSpec ts;
        std::string kind, role;
        ls >> ts.task_id >> kind >> role >> ts.weight;
        ts.vocab_kind = vocab_kind_from(kind);
        ts.role = task_role_from(role);
        ds.tasks.push_back(std::move(ts));
      } else {
        throw ParseError("manifest line " + std::to_string(lineno) + ": unknown key " +
                         key);
      }
      if (ls.fail())
        throw ParseError("manifest line " + std::to_string(lineno) + ": malformed value");
    }
  }
  ds.sequences.assign(ds.tasks.size(), std::vector<ActionSequence>(ds.user_count));
  for (std::size_t ti = 0; ti < ds.tasks.size(); ++ti)
    for (std::uint32_t u = 0; u < ds.user_count; ++u) {
      ds.sequences[ti][u].user = u;
      ds.sequences[ti][u].task_id = ds.tasks[ti].task_id;
    }
  {
    std::ifstream is(fs::path(dir) / "actions.tsv");
    if (!is) throw ConfigError("load_dataset: cannot open actions.tsv in " + dir);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      if (line.empty()) continue;
      std::istringstream ls(line);
      std::string task;
      std::uint32_t user = 0, id = 0;
      std::int64_t time = 0;
      if (!std::getline(ls, task, '\t') || !(ls >> user >> id >> time))
        throw ParseError("actions.tsv line " + std::to_string(lineno) + ": malformed");
      const std::size_t ti = ds.task_index(task);
      if (user >= ds.user_count)
        throw ParseError("actions.tsv line " + std::to_string(lineno) +
                         ": user out of range");
      ActionSequence& s = ds.sequences[ti][user];
      if (!s.actions.empty() && time <= s.actions.back().time)
        throw ParseError("actions.tsv line " + std::to_string(lineno) +
                         ": timestamps out of order in sequence (task " + task +
                         ", user " + std::to_string(user) + ")");
      s.actions.push_back({id, time});
    }
  }
  {
    std::ifstream is(fs::path(dir) / "item_categories.tsv");
    if (!is) throw ConfigError("load_dataset: cannot open item_categories.tsv in " + dir);
    ds.item_category.assign(ds.item_count, 0);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      if (line.empty()) continue;
      std::istringstream ls(line);
      std::uint32_t item = 0, cat = 0;
      if (!(ls >> item >> cat) || item >= ds.item_count)
        throw ParseError("item_categories.tsv line " + std::to_string(lineno) +
                         ": malformed");
      ds.item_category[item] = cat;
    }
  }
  return ds;
}

inline bool dataset_equal(const Dataset& a, const Dataset& b) {
  if (a.user_count != b.user_count || a.item_count != b.item_count ||
      a.category_count != b.category_count || a.friend_clusters != b.friend_clusters ||
      a.rho != b.rho || a.seed != b.seed || a.item_category != b.item_category ||
      a.tasks.size() != b.tasks.size())
    return false;
  for (std::size_t i = 0; i < a.tasks.size(); ++i) {
    if (a.tasks[i].task_id != b.tasks[i].task_id ||
        a.tasks[i].vocab_kind != b.tasks[i].vocab_kind ||
        a.tasks[i].role != b.tasks[i].role || a.tasks[i].weight != b.tasks[i].weight)
      return false;
  }
  for (std::size_t ti = 0; ti < a.sequences.size(); ++ti)
    for (std::uint32_t u = 0; u < a.user_count; ++u) {
      const auto& sa = a.sequences[ti][u].actions;
      const auto& sb = b.sequences[ti][u].actions;
      if (sa.size() != sb.size()) return false;
      for (std::size_t j = 0; j < sa.size(); ++j)
        if (sa[j].id != sb[j].id || sa[j].time != sb[j].time) return false;
    }
  return true;
}

}  // namespace m3rec
