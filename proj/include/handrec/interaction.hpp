#pragma once

#include "handrec/hand_model.hpp"
#include "handrec/ops.hpp"

// Joint-feature-space relationship modeling: a semantic graph convolution
// over each hand's skeleton and a multi-head transformer across both hands'
// 42 joint tokens.
namespace handrec {

// Fixed 21-node hand skeleton with learnable per-directed-edge weights.
struct SkeletonGraph {
  std::vector<std::pair<int, int>> directed_edges;  // (target, source)
  std::vector<std::vector<int>> neighbors;          // per node, excl. self
  Tensor adjacency;  // (21,21) binary, bone edges + self loops

  static SkeletonGraph hand() {
    SkeletonGraph g;
    g.neighbors.resize(kReportedJoints);
    g.adjacency = Tensor({kReportedJoints, kReportedJoints});
    for (int i = 0; i < kReportedJoints; ++i) g.adjacency.at(i, i) = 1;
    for (auto [a, b] : skeleton_bones()) {
      g.adjacency.at(a, b) = 1;
      g.adjacency.at(b, a) = 1;
      g.neighbors[size_t(a)].push_back(b);
      g.neighbors[size_t(b)].push_back(a);
      g.directed_edges.push_back({a, b});
      g.directed_edges.push_back({b, a});
    }
    return g;
  }

  int edge_count() const { return int(directed_edges.size()); }
};

enum class Activation { relu, identity };

struct GcnLayerWeights {
  Var w_self;       // (C_out, C_in)
  Var w_neigh;      // (C_out, C_in)
  Var bias;         // (C_out)
  Var edge_logits;  // (E), softmax-normalized over incoming edges per node
};

namespace interaction_detail {

// Dense (J,J) mixing matrix M with M[src][dst] = a_{dst,src}; columns are
// softmax over each node's incoming edges. Backward gathers back to logits.
inline Var edge_mix_matrix(Tape& t, Var edge_logits,
                           const SkeletonGraph& graph) {
  const Tensor& L = t.val(edge_logits);
  int E = graph.edge_count();
  if (L.numel() != E) throw_invalid("gcn: edge logit count mismatch");
  const int J = kReportedJoints;
  Tensor out({J, J});
  // incoming-edge softmax per target node
  std::vector<std::vector<int>> incoming(static_cast<size_t>(J));
  for (int e = 0; e < E; ++e)
    incoming[size_t(graph.directed_edges[size_t(e)].first)].push_back(e);
  for (int i = 0; i < J; ++i) {
    const auto& in = incoming[size_t(i)];
    if (in.empty()) continue;
    Real mx = -1e300;
    for (int e : in) mx = std::max(mx, L.data[size_t(e)]);
    Real sum = 0;
    for (int e : in) sum += std::exp(L.data[size_t(e)] - mx);
    for (int e : in) {
      int src = graph.directed_edges[size_t(e)].second;
      out.at(src, i) = std::exp(L.data[size_t(e)] - mx) / sum;
    }
  }
  return t.record(std::move(out), t.needs_grad(edge_logits),
                  [edge_logits, &graph](Tape& t, Var self) {
    const Tensor& g = t.grad(self);
    const Tensor& M = t.val(self);
    Tensor& gl = t.grad_acc(edge_logits);
    const int J = kReportedJoints;
    std::vector<std::vector<int>> incoming(static_cast<size_t>(J));
    for (int e = 0; e < graph.edge_count(); ++e)
      incoming[size_t(graph.directed_edges[size_t(e)].first)].push_back(e);
    for (int i = 0; i < J; ++i) {
      const auto& in = incoming[size_t(i)];
      if (in.empty()) continue;
      Real dot = 0;
      for (int e : in) {
        int src = graph.directed_edges[size_t(e)].second;
        dot += g.at(src, i) * M.at(src, i);
      }
      for (int e : in) {
        int src = graph.directed_edges[size_t(e)].second;
        gl.data[size_t(e)] += M.at(src, i) * (g.at(src, i) - dot);
      }
    }
  });
}

}  // namespace interaction_detail

// y_i = act(W_self x_i + sum_{j in N(i)} a_ij W_neigh x_j + bias)
inline Var gcn_layer(Tape& t, Var x, const SkeletonGraph& graph,
                     const GcnLayerWeights& w,
                     Activation act = Activation::relu) {
  if (!t.val(x).all_finite()) throw_invalid("gcn_layer: non-finite input");
  Var self_term = ops::matmul(t, w.w_self, x);
  Var neigh = ops::matmul(t, w.w_neigh, x);  // (C_out, J)
  Var mix = interaction_detail::edge_mix_matrix(t, w.edge_logits, graph);
  Var agg = ops::matmul(t, neigh, mix);
  Var y = ops::add_col_bias(t, ops::add(t, self_term, agg), w.bias);
  return act == Activation::relu ? ops::relu(t, y) : y;
}

// Both hands through the same layer stack (shared weights, no cross-hand
// mixing here).
inline std::pair<Var, Var> gcn_forward(Tape& t, Var x_left, Var x_right,
                                       const SkeletonGraph& graph,
                                       const std::vector<GcnLayerWeights>& ws,
                                       Activation act = Activation::relu) {
  Var l = x_left, r = x_right;
  for (const auto& w : ws) {
    l = gcn_layer(t, l, graph, w, act);
    r = gcn_layer(t, r, graph, w, act);
  }
  return {l, r};
}

struct TransformerLayerWeights {
  Var ln1_gain, ln1_bias;
  Var wq, bq, wk, bk, wv, bv, wo, bo;  // all (C,C) / (C)
  Var ln2_gain, ln2_bias;
  Var ff_w1, ff_b1;  // (H,C), (H)
  Var ff_w2, ff_b2;  // (C,H), (C)
};

struct TransformerWeights {
  Var position;  // (C, tokens) learned per-slot embedding
  std::vector<TransformerLayerWeights> layers;
  int heads = 4;
};

// Per-layer, per-head attention matrices captured for inspection.
struct AttnTrace {
  std::vector<std::vector<Tensor>> rows;  // [layer][head] -> (T,T)
};

constexpr int kTwoHandTokens = 2 * kReportedJoints;

// Pre-norm multi-head self-attention stack over the 42 joint tokens
// (21 left then 21 right). Position embeddings are added before layer 1.
inline Var transformer_forward(Tape& t, Var tokens,
                               const TransformerWeights& w,
                               AttnTrace* trace = nullptr) {
  using namespace ops;
  const Tensor& X = t.val(tokens);
  if (X.rank() != 2 || X.shape[1] != kTwoHandTokens)
    throw_invalid("transformer_forward: expected " +
                  std::to_string(kTwoHandTokens) + " tokens, got " +
                  (X.rank() == 2 ? std::to_string(X.shape[1]) : X.shape_str()));
  int C = X.shape[0];
  if (C % w.heads != 0)
    throw_invalid("transformer_forward: channels not divisible by heads");
  int dk = C / w.heads;
  Real inv_sqrt_dk = 1.0 / std::sqrt(Real(dk));

  Var x = add(t, tokens, w.position);
  if (trace) trace->rows.clear();
  for (const auto& L : w.layers) {
    // attention block
    Var xn = layer_norm_cols(t, x, L.ln1_gain, L.ln1_bias);
    Var q = add_col_bias(t, matmul(t, L.wq, xn), L.bq);
    Var k = add_col_bias(t, matmul(t, L.wk, xn), L.bk);
    Var v = add_col_bias(t, matmul(t, L.wv, xn), L.bv);
    Var heads_out;
    if (trace) trace->rows.emplace_back();
    for (int h = 0; h < w.heads; ++h) {
      Var qh = slice0(t, q, h * dk, (h + 1) * dk);
      Var kh = slice0(t, k, h * dk, (h + 1) * dk);
      Var vh = slice0(t, v, h * dk, (h + 1) * dk);
      Var scores = scale(t, matmul(t, qh, kh, true, false), inv_sqrt_dk);
      Var attn = softmax_rows(t, scores);  // row = query token
      if (trace) trace->rows.back().push_back(t.val(attn));
      Var oh = matmul(t, vh, attn, false, true);
      heads_out = (h == 0) ? oh : concat0(t, heads_out, oh);
    }
    Var attn_out = add_col_bias(t, matmul(t, L.wo, heads_out), L.bo);
    x = add(t, x, attn_out);
    // feed-forward block
    Var yn = layer_norm_cols(t, x, L.ln2_gain, L.ln2_bias);
    Var h1 = relu(t, add_col_bias(t, matmul(t, L.ff_w1, yn), L.ff_b1));
    Var h2 = add_col_bias(t, matmul(t, L.ff_w2, h1), L.ff_b2);
    x = add(t, x, h2);
  }
  return x;
}

}  // namespace handrec
