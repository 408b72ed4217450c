// Copyright 2026 the m3rec authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "m3rec/autodiff.hpp"
#include "m3rec/errors.hpp"
#include "m3rec/matrix.hpp"

namespace m3rec {

struct Action {
  std::uint32_t id = 0;
  std::int64_t time = 0;
};

// One user's time-ordered actions of a single action type.
struct ActionSequence {
  std::uint32_t user = 0;
  std::string task_id;
  std::vector<Action> actions;

  std::size_t size() const { return actions.size(); }
  bool empty() const { return actions.empty(); }

  std::vector<std::uint32_t> ids() const {
    std::vector<std::uint32_t> out;
    out.reserve(actions.size());
    for (const Action& a : actions) out.push_back(a.id);
    return out;
  }
};

// Digraph over the unique ids of a sequence. Edges connect consecutive
// actions; revisits collapse into one node and duplicate edges collapse into
// one. a_out row u holds 1/outdeg(u) at each out-neighbor, a_in row v holds
// 1/indeg(v) at each in-neighbor, so every nonzero row sums to 1.
struct SequenceGraph {
  std::vector<std::uint32_t> nodes;  // vocab ids in order of first appearance
  std::size_t last_node_index = 0;
  Matrix a_out;  // n x n
  Matrix a_in;   // n x n

  std::size_t node_count() const { return nodes.size(); }

  // The n x 2n connection matrix [A_out | A_in].
  Matrix connection() const {
    const std::size_t n = nodes.size();
    Matrix a(n, 2 * n);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < n; ++c) {
        a(r, c) = a_out(r, c);
        a(r, n + c) = a_in(r, c);
      }
    }
    return a;
  }
};

inline SequenceGraph build_graph(std::span<const std::uint32_t> ids) {
  if (ids.empty()) throw ConfigError("build_graph: empty sequence");
  SequenceGraph g;
  std::map<std::uint32_t, std::size_t> index;
  for (std::uint32_t id : ids) {
    if (index.emplace(id, g.nodes.size()).second) g.nodes.push_back(id);
  }
  const std::size_t n = g.nodes.size();
  g.last_node_index = index.at(ids.back());
  g.a_out = Matrix(n, n);
  g.a_in = Matrix(n, n);

  std::set<std::pair<std::size_t, std::size_t>> edges;
  for (std::size_t j = 0; j + 1 < ids.size(); ++j)
    edges.emplace(index.at(ids[j]), index.at(ids[j + 1]));

  std::vector<std::size_t> outdeg(n, 0), indeg(n, 0);
  for (const auto& [u, v] : edges) {
    ++outdeg[u];
    ++indeg[v];
  }
  for (const auto& [u, v] : edges) {
    g.a_out(u, v) = 1.0 / static_cast<double>(outdeg[u]);
    g.a_in(v, u) = 1.0 / static_cast<double>(indeg[v]);
  }
  return g;
}

inline SequenceGraph build_graph(const ActionSequence& s) {
  if (s.empty())
    throw ConfigError("build_graph: empty sequence (user " + std::to_string(s.user) +
                      ", task " + s.task_id + ")");
  const auto ids = s.ids();
  return build_graph(std::span<const std::uint32_t>(ids));
}

// Neighbor gathering: row i of the result is
//   [ (a_out row i) * H  |  (a_in row i) * H ] + bias^T,
// an n x 2d matrix. H must have one row per graph node; bias is 2d x 1.
inline Var gather(const SequenceGraph& g, Var h, Var bias) {
  Tape& t = TapeOps::same_tape(h, bias);
  const Matrix& hv = h.value();
  if (hv.rows() != g.node_count())
    throw ShapeError("gather: node states " + hv.shape_str() + " vs graph with " +
                     std::to_string(g.node_count()) + " nodes");
  if (!bias.value().is_column_vector() || bias.value().rows() != 2 * hv.cols())
    throw ShapeError("gather: bias " + bias.value().shape_str() + " for width " +
                     std::to_string(2 * hv.cols()));
  Var out_part = matmul(t.constant(g.a_out), h);
  Var in_part = matmul(t.constant(g.a_in), h);
  return add_bias_rows(hconcat(out_part, in_part), bias);
}

}  // namespace m3rec
