// Copyright 2026 the m3rec authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "m3rec/autodiff.hpp"
#include "m3rec/sequence.hpp"

namespace m3rec {

// One gated graph layer. Each gate mixes the gathered neighborhood signal
// (width 2d) with the node's own state (width d):
//   z = sigmoid(Wz c + Vz h)   update gate
//   r = sigmoid(Wr c + Vr h)   reset gate
//   hc = tanh(Wh c + Vh (r .* h))
//   h' = (1 - z) .* h + z .* hc
// *_w_gather are the d x 2d matrices applied to c, *_w_state the d x d
// matrices applied to h; gather_bias is the 2d bias added inside c.
struct GgsnnLayer {
  Parameter update_w_gather, update_w_state;
  Parameter reset_w_gather, reset_w_state;
  Parameter cand_w_gather, cand_w_state;
  Parameter gather_bias;
};

struct GgsnnUnit {
  std::size_t dim = 0;
  std::vector<GgsnnLayer> layers;  // applied in order; separate params per layer
};

// Soft-attention readout over node states plus the output projection used for
// scoring (d x 2d, applied to global-local concatenation).
struct AttentionReadout {
  Parameter att_query;   // d x 1
  Parameter att_w_last;  // d x d, applied to the last node's state
  Parameter att_w_node;  // d x d, applied to each node's state
  Parameter att_bias;    // d x 1
  Parameter out_proj;    // d x 2d
};

// One gated layer over all nodes at once. h is n x d (row per node).
inline Var unit_step(const SequenceGraph& g, Var h, const GgsnnLayer& lp) {
  Tape& t = *h.tape;
  Var c = gather(g, h, t.param(lp.gather_bias));
  Var z = sigmoid(add(matmul_nt(c, t.param(lp.update_w_gather)),
                      matmul_nt(h, t.param(lp.update_w_state))));
  Var r = sigmoid(add(matmul_nt(c, t.param(lp.reset_w_gather)),
                      matmul_nt(h, t.param(lp.reset_w_state))));
  Var hc = tanh(add(matmul_nt(c, t.param(lp.cand_w_gather)),
                    matmul_nt(hadamard(r, h), t.param(lp.cand_w_state))));
  // (1 - z) .* h + z .* hc
  return add(hadamard(scalar_affine(z, -1.0, 1.0), h), hadamard(z, hc));
}

inline Var propagate(const SequenceGraph& g, Var h0, const GgsnnUnit& unit) {
  if (unit.layers.empty()) throw ConfigError("propagate: unit has no layers");
  Var h = h0;
  for (const GgsnnLayer& lp : unit.layers) h = unit_step(g, h, lp);
  return h;
}

struct SequenceEmbedding {
  Var global;  // s_g: attention-weighted sum of node states, d x 1
  Var last;    // h_l: state of the sequence's final node, d x 1
};

// Attention weights are used unnormalized:
//   alpha_i = q^T sigmoid(W_last h_l + W_node h_i + bias),  s_g = sum alpha_i h_i.
inline SequenceEmbedding readout(Var h, std::size_t last_node_index,
                                 const AttentionReadout& ro) {
  Tape& t = *h.tape;
  const Matrix& hv = h.value();
  if (last_node_index >= hv.rows())
    throw ShapeError("readout: last node index " + std::to_string(last_node_index) +
                     " out of " + hv.shape_str());
  Var h_last = row_as_col(h, last_node_index);
  Var shift = add(matmul(t.param(ro.att_w_last), h_last), t.param(ro.att_bias));
  Var gates = sigmoid(add_bias_rows(matmul_nt(h, t.param(ro.att_w_node)), shift));
  Var alpha = matmul(gates, t.param(ro.att_query));  // n x 1
  Var global = matmul_tn(h, alpha);                  // d x 1
  return {global, h_last};
}

// logits_j = < W3 (s_g ++ h_l), vocab row j > for every vocabulary row.
inline Var score(Var global, Var last, const Parameter& out_proj,
                 const Parameter& vocab_table) {
  Tape& t = *global.tape;
  const Matrix& w = out_proj.value;
  if (w.cols() != global.value().rows() + last.value().rows())
    throw ShapeError("score: projection " + w.shape_str() + " vs embedding " +
                     std::to_string(global.value().rows() + last.value().rows()));
  Var q = matmul(t.param(out_proj), vconcat(global, last));
  return matmul(t.param(vocab_table), q);  // |V| x 1
}

}  // namespace m3rec
