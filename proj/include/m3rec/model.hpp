// Copyright 2026 the m3rec authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "m3rec/autodiff.hpp"
#include "m3rec/ggsnn.hpp"
#include "m3rec/rng.hpp"
#include "m3rec/sequence.hpp"
#include "m3rec/task.hpp"

namespace m3rec {

// Attention aggregation of group members (single-layer feedforward scoring,
// softmax-normalized weights, relu projection of the weighted sum).
struct GroupAggParams {
  Parameter agg_proj;     // d x d, projection of the weighted member sum
  Parameter member_w;     // d x d, member feedforward weight
  Parameter member_bias;  // d x 1, member feedforward bias
  Parameter score_w;      // 1 x d, attention score weight
  Parameter score_bias;   // 1 x 1, attention score bias
};

struct TaskModel {
  GgsnnUnit unit;
  AttentionReadout readout;
};

struct ModelConfig {
  std::size_t dim = 128;  // embedding width
  std::size_t layers = 1;
  std::size_t max_seq_len = 50;  // longer inputs keep only the most recent actions
  std::uint64_t seed = 1;
};

// One training pair: input action ids plus the ground-truth next id.
struct Example {
  std::vector<std::uint32_t> input;
  std::uint32_t target = 0;
};

class M3RecModel {
 public:
  std::size_t dim = 0;
  std::size_t layers = 1;
  std::size_t max_seq_len = 50;
  std::uint64_t seed = 0;
  std::uint32_t item_count = 0, user_count = 0, category_count = 0;

  std::vector<TaskSpec> tasks;
  Parameter item_table, user_table, category_table;
  std::vector<TaskModel> task_models;  // aligned with tasks
  GroupAggParams group;

  const TaskSpec& task(std::string_view id) const {
    return tasks[find_task_index(tasks, id)];
  }

  std::size_t task_index(std::string_view id) const { return find_task_index(tasks, id); }

  const Parameter& vocab_table(VocabKind k) const {
    switch (k) {
      case VocabKind::item: return item_table;
      case VocabKind::category: return category_table;
      case VocabKind::user: return user_table;
    }
    return item_table;
  }

  std::uint32_t vocab_size(VocabKind k) const {
    switch (k) {
      case VocabKind::item: return item_count;
      case VocabKind::category: return category_count;
      case VocabKind::user: return user_count;
    }
    return item_count;
  }

  // Registry order is fixed; checkpoints and optimizer state rely on it.
  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    out.push_back(&item_table);
    out.push_back(&user_table);
    out.push_back(&category_table);
    for (TaskModel& tm : task_models) {
      for (GgsnnLayer& l : tm.unit.layers) {
        out.push_back(&l.update_w_gather);
        out.push_back(&l.update_w_state);
        out.push_back(&l.reset_w_gather);
        out.push_back(&l.reset_w_state);
        out.push_back(&l.cand_w_gather);
        out.push_back(&l.cand_w_state);
        out.push_back(&l.gather_bias);
      }
      out.push_back(&tm.readout.att_query);
      out.push_back(&tm.readout.att_w_last);
      out.push_back(&tm.readout.att_w_node);
      out.push_back(&tm.readout.att_bias);
      out.push_back(&tm.readout.out_proj);
    }
    out.push_back(&group.agg_proj);
    out.push_back(&group.member_w);
    out.push_back(&group.member_bias);
    out.push_back(&group.score_w);
    out.push_back(&group.score_bias);
    return out;
  }

  std::vector<const Parameter*> parameters() const {
    auto list = const_cast<M3RecModel*>(this)->parameters();
    return {list.begin(), list.end()};
  }

  void zero_grads() const {
    for (const Parameter* p : parameters()) p->zero_grad();
  }
};

namespace detail {

inline Matrix init_matrix(std::size_t rows, std::size_t cols, double bound, Rng rng) {
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.uniform(-bound, bound);
  return m;
}

// Every parameter draws from its own stream derived from (seed, name), so a
// model with fewer tasks initializes its shared names identically.
inline Parameter make_param(const Rng& root, std::string name, std::size_t rows,
                            std::size_t cols, double bound) {
  Matrix v = init_matrix(rows, cols, bound, root.derive(name));
  return Parameter(std::move(name), std::move(v));
}

}  // namespace detail

inline M3RecModel init_model(std::uint32_t items, std::uint32_t users,
                             std::uint32_t categories, std::vector<TaskSpec> tasks,
                             const ModelConfig& cfg) {
  if (items < 1 || users < 1 || categories < 1)
    throw ConfigError("init_model: every vocabulary must be non-empty");
  if (cfg.dim < 1) throw ConfigError("init_model: dim must be >= 1");
  if (cfg.layers < 1) throw ConfigError("init_model: layers must be >= 1");
  if (tasks.empty()) throw ConfigError("init_model: no tasks");
  std::set<std::string> seen;
  std::size_t mains = 0;
  for (const TaskSpec& ts : tasks) {
    if (!seen.insert(ts.task_id).second)
      throw ConfigError("init_model: duplicate task id " + ts.task_id);
    if (ts.role == TaskRole::main) ++mains;
    if (!std::isfinite(ts.weight) || ts.weight < 0.0)
      throw ConfigError("init_model: task " + ts.task_id + " has invalid weight");
  }
  if (mains != 1) throw ConfigError("init_model: exactly one main task required");

  M3RecModel m;
  m.dim = cfg.dim;
  m.layers = cfg.layers;
  m.max_seq_len = cfg.max_seq_len;
  m.seed = cfg.seed;
  m.item_count = items;
  m.user_count = users;
  m.category_count = categories;
  m.tasks = std::move(tasks);

  const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.dim));
  const Rng root(cfg.seed);
  const std::size_t d = cfg.dim;

  m.item_table = detail::make_param(root, "emb.item", items, d, bound);
  m.user_table = detail::make_param(root, "emb.user", users, d, bound);
  m.category_table = detail::make_param(root, "emb.category", categories, d, bound);

  for (const TaskSpec& ts : m.tasks) {
    TaskModel tm;
    tm.unit.dim = d;
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      const std::string pre = "task." + ts.task_id + ".l" + std::to_string(l) + ".";
      GgsnnLayer layer;
      layer.update_w_gather = detail::make_param(root, pre + "update_w_gather", d, 2 * d, bound);
      layer.update_w_state = detail::make_param(root, pre + "update_w_state", d, d, bound);
      layer.reset_w_gather = detail::make_param(root, pre + "reset_w_gather", d, 2 * d, bound);
      layer.reset_w_state = detail::make_param(root, pre + "reset_w_state", d, d, bound);
      layer.cand_w_gather = detail::make_param(root, pre + "cand_w_gather", d, 2 * d, bound);
      layer.cand_w_state = detail::make_param(root, pre + "cand_w_state", d, d, bound);
      layer.gather_bias = detail::make_param(root, pre + "gather_bias", 2 * d, 1, bound);
      tm.unit.layers.push_back(std::move(layer));
    }
    const std::string pre = "task." + ts.task_id + ".";
    tm.readout.att_query = detail::make_param(root, pre + "att_query", d, 1, bound);
    tm.readout.att_w_last = detail::make_param(root, pre + "att_w_last", d, d, bound);
    tm.readout.att_w_node = detail::make_param(root, pre + "att_w_node", d, d, bound);
    tm.readout.att_bias = detail::make_param(root, pre + "att_bias", d, 1, bound);
    tm.readout.out_proj = detail::make_param(root, pre + "out_proj", d, 2 * d, bound);
    m.task_models.push_back(std::move(tm));
  }

  m.group.agg_proj = detail::make_param(root, "group.agg_proj", d, d, bound);
  m.group.member_w = detail::make_param(root, "group.member_w", d, d, bound);
  m.group.member_bias = detail::make_param(root, "group.member_bias", d, 1, bound);
  m.group.score_w = detail::make_param(root, "group.score_w", 1, d, bound);
  m.group.score_bias = detail::make_param(root, "group.score_bias", 1, 1, bound);
  return m;
}

namespace detail {

inline void check_ids(const M3RecModel& m, const TaskSpec& ts,
                      std::span<const std::uint32_t> ids) {
  const std::uint32_t vs = m.vocab_size(ts.vocab_kind);
  for (std::uint32_t id : ids)
    if (id >= vs)
      throw LookupError("task " + ts.task_id + ": id " + std::to_string(id) +
                        " outside vocabulary of size " + std::to_string(vs));
}

inline std::span<const std::uint32_t> tail(std::span<const std::uint32_t> ids,
                                           std::size_t max_len) {
  if (max_len > 0 && ids.size() > max_len) return ids.subspan(ids.size() - max_len);
  return ids;
}

}  // namespace detail

// Full per-task forward: graph -> shared-table node states -> gated layers ->
// attention readout -> logits over the task's vocabulary.
inline Var forward_task(Tape& t, const M3RecModel& m, std::size_t task_idx,
                        std::span<const std::uint32_t> ids) {
  const TaskSpec& ts = m.tasks.at(task_idx);
  const TaskModel& tm = m.task_models.at(task_idx);
  auto input = detail::tail(ids, m.max_seq_len);
  detail::check_ids(m, ts, input);
  SequenceGraph g = build_graph(input);
  const Parameter& table = m.vocab_table(ts.vocab_kind);
  Var h0 = take_rows(t.param(table), g.nodes);
  Var h = propagate(g, h0, tm.unit);
  SequenceEmbedding emb = readout(h, g.last_node_index, tm.readout);
  return score(emb.global, emb.last, tm.readout.out_proj, table);
}

// Sum (not mean) of cross-entropy losses over a batch.
inline Var task_loss(Tape& t, const M3RecModel& m, std::size_t task_idx,
                     std::span<const Example> batch) {
  if (batch.empty()) throw ConfigError("task_loss: empty batch");
  const TaskSpec& ts = m.tasks.at(task_idx);
  std::vector<Var> losses;
  losses.reserve(batch.size());
  for (const Example& ex : batch) {
    if (ex.target >= m.vocab_size(ts.vocab_kind))
      throw LookupError("task " + ts.task_id + ": target " + std::to_string(ex.target) +
                        " outside vocabulary");
    Var logits = forward_task(t, m, task_idx, ex.input);
    losses.push_back(softmax_cross_entropy(logits, ex.target));
  }
  if (losses.size() == 1) return losses.front();
  return add_all(losses);
}

// Weighted joint loss over per-task batches; weights align with the task
// registry. Zero-weight tasks are skipped entirely, so they contribute neither
// value nor gradient.
inline Var joint_loss(Tape& t, const M3RecModel& m,
                      std::span<const std::vector<Example>> batches,
                      std::span<const double> weights) {
  if (batches.size() != m.tasks.size() || weights.size() != m.tasks.size())
    throw ConfigError("joint_loss: got " + std::to_string(batches.size()) +
                      " batches / " + std::to_string(weights.size()) + " weights for " +
                      std::to_string(m.tasks.size()) + " tasks");
  std::vector<Var> terms;
  for (std::size_t i = 0; i < m.tasks.size(); ++i) {
    if (weights[i] == 0.0) continue;
    Var li = task_loss(t, m, i, batches[i]);
    terms.push_back(weights[i] == 1.0 ? li : scalar_affine(li, weights[i], 0.0));
  }
  if (terms.empty()) return t.constant(Matrix(1, 1));
  if (terms.size() == 1) return terms.front();
  return add_all(terms);
}

// Ranked ids by descending logit; ties broken by ascending id. Items already
// seen are deliberately not filtered: sequences revisit entries.
inline std::vector<std::pair<std::uint32_t, double>> rank_logits(const Matrix& logits,
                                                                 std::size_t n) {
  std::vector<std::uint32_t> order(logits.rows());
  std::iota(order.begin(), order.end(), 0u);
  std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    if (logits[a] != logits[b]) return logits[a] > logits[b];
    return a < b;
  });
  const std::size_t k = std::min(n, order.size());
  std::vector<std::pair<std::uint32_t, double>> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.emplace_back(order[i], logits[order[i]]);
  return out;
}

inline std::vector<std::pair<std::uint32_t, double>> recommend(
    const M3RecModel& m, std::string_view task_id, std::span<const std::uint32_t> ids,
    std::size_t n) {
  if (n < 1) throw ConfigError("recommend: n must be >= 1");
  const std::size_t ti = m.task_index(task_id);
  Tape t;
  Var logits = forward_task(t, m, ti, ids);
  return rank_logits(logits.value(), n);
}

// ---------------------------------------------------------------------------
// Checkpoint: one archive holding a text manifest followed by each named
// parameter as a length-prefixed row-major block of little-endian doubles.
// ---------------------------------------------------------------------------

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void write_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline void write_f64(std::ostream& os, double d) {
  std::uint64_t bits;
  static_assert(sizeof(bits) == sizeof(d));
  std::memcpy(&bits, &d, sizeof(bits));
  write_u64(os, bits);
}

inline std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw ParseError("checkpoint: truncated u32");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

inline std::uint64_t read_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw ParseError("checkpoint: truncated u64");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

inline double read_f64(std::istream& is) {
  std::uint64_t bits = read_u64(is);
  double d;
  std::memcpy(&d, &bits, sizeof(d));
  return d;
}

}  // namespace detail

inline void save_checkpoint(const M3RecModel& m, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ConfigError("save_checkpoint: cannot open " + path);
  std::ostringstream manifest;
  manifest << "m3rec-checkpoint 1\n";
  manifest << "dim " << m.dim << "\n";
  manifest << "layers " << m.layers << "\n";
  manifest << "max_seq_len " << m.max_seq_len << "\n";
  manifest << "seed " << m.seed << "\n";
  manifest << "items " << m.item_count << "\n";
  manifest << "users " << m.user_count << "\n";
  manifest << "categories " << m.category_count << "\n";
  for (const TaskSpec& ts : m.tasks) {
    std::ostringstream w;
    w.precision(17);
    w << ts.weight;
    manifest << "task " << ts.task_id << " " << to_string(ts.vocab_kind) << " "
             << to_string(ts.role) << " " << w.str() << "\n";
  }
  manifest << "end\n";
  const std::string mtext = manifest.str();
  detail::write_u64(os, mtext.size());
  os.write(mtext.data(), static_cast<std::streamsize>(mtext.size()));

  const auto params = m.parameters();
  detail::write_u64(os, params.size());
  for (const Parameter* p : params) {
    detail::write_u32(os, static_cast<std::uint32_t>(p->name.size()));
    os.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    detail::write_u64(os, p->value.rows());
    detail::write_u64(os, p->value.cols());
    for (std::size_t i = 0; i < p->value.size(); ++i) detail::write_f64(os, p->value[i]);
  }
  if (!os) throw ConfigError("save_checkpoint: write failed for " + path);
}

inline M3RecModel load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("load_checkpoint: cannot open " + path);
  const std::uint64_t msize = detail::read_u64(is);
  std::string mtext(msize, '\0');
  is.read(mtext.data(), static_cast<std::streamsize>(msize));
  if (!is) throw ParseError("checkpoint: truncated manifest");

  ModelConfig cfg;
  std::uint32_t items = 0, users = 0, categories = 0;
  std::vector<TaskSpec> tasks;
  std::istringstream ms(mtext);
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(ms, line) || line != "m3rec-checkpoint 1")
    throw ParseError("checkpoint: bad magic line");
  while (std::getline(ms, line)) {
    ++lineno;
    if (line == "end") break;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "dim") ls >> cfg.dim;
    else if (key == "layers") ls >> cfg.layers;
    else if (key == "max_seq_len") ls >> cfg.max_seq_len;
    else if (key == "seed") ls >> cfg.seed;
    else if (key == "items") ls >> items;
    else if (key == "users") ls >> users;
    else if (key == "categories") ls >> categories;
    else if (key == "task") {
      TaskSpec ts;
      std::string kind, role;
      ls >> ts.task_id >> kind >> role >> ts.weight;
      ts.vocab_kind = vocab_kind_from(kind);
      ts.role = task_role_from(role);
      tasks.push_back(std::move(ts));
    } else {
      throw ParseError("checkpoint manifest line " + std::to_string(lineno) +
                       ": unknown key " + key);
    }
    if (ls.fail())
      throw ParseError("checkpoint manifest line " + std::to_string(lineno) +
                       ": malformed value");
  }

  M3RecModel m = init_model(items, users, categories, std::move(tasks), cfg);
  const std::uint64_t count = detail::read_u64(is);
  auto params = m.parameters();
  if (count != params.size())
    throw ParseError("checkpoint: expected " + std::to_string(params.size()) +
                     " parameters, file has " + std::to_string(count));
  for (Parameter* p : params) {
    const std::uint32_t nlen = detail::read_u32(is);
    std::string name(nlen, '\0');
    is.read(name.data(), nlen);
    if (!is) throw ParseError("checkpoint: truncated parameter name");
    if (name != p->name)
      throw ParseError("checkpoint: parameter order mismatch, expected " + p->name +
                       " got " + name);
    const std::uint64_t rows = detail::read_u64(is);
    const std::uint64_t cols = detail::read_u64(is);
    if (rows != p->value.rows() || cols != p->value.cols())
      throw ParseError("checkpoint: shape mismatch for " + name);
    for (std::size_t i = 0; i < p->value.size(); ++i) p->value[i] = detail::read_f64(is);
  }
  return m;
}

}  // namespace m3rec
