// The registration network: a two-stage GCN+MLP keypoint encoder running on
// the single-graph edges, followed by GATv2 cross-attention over the
// candidate edges. The final GAT layer's per-edge softmax coefficients are
// the match confidences.
//
// Node features are initialised with raw coordinates only; semantic, instance
// and feature-class ids shape the topology and never enter the computation
// graph.
#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "semreg/ad/engine.hpp"
#include "semreg/ad/params.hpp"
#include "semreg/errors.hpp"
#include "semreg/graph.hpp"
#include "semreg/rng.hpp"

namespace semreg {

struct NetConfig {
  int input_dim = 3;
  int enc_gcn1_out = 32;
  std::vector<int> enc_mlp1 = {32, 64, 128};
  int enc_gcn2_out = 256;
  std::vector<int> enc_mlp2 = {256, 256, 256};
  int attn_gat1_out = 128;
  int attn_gat1_heads = 3;
  std::vector<int> attn_mlp = {384, 64, 32};
  int attn_gat2_out = 8;
  int attn_gat2_heads = 1;
  double dropout_rate = 0.10;
  double leaky_slope = 0.2;

  int embedding_dim() const { return enc_mlp2.back(); }

  void validate() const {
    auto positive = [](int v, const char* what) {
      if (v < 1) throw ConfigError(std::string("model: ") + what + " must be >= 1");
    };
    positive(input_dim, "input_dim");
    positive(enc_gcn1_out, "enc_gcn1_out");
    positive(enc_gcn2_out, "enc_gcn2_out");
    positive(attn_gat1_out, "attn_gat1_out");
    positive(attn_gat1_heads, "attn_gat1_heads");
    positive(attn_gat2_out, "attn_gat2_out");
    positive(attn_gat2_heads, "attn_gat2_heads");
    if (enc_mlp1.size() < 2 || enc_mlp2.size() < 2 || attn_mlp.size() < 2) {
      throw ConfigError("model: MLP specs need at least input and output widths");
    }
    if (enc_mlp1.front() != enc_gcn1_out) {
      throw ConfigError("model: enc_mlp1 input must equal enc_gcn1_out");
    }
    if (enc_mlp2.front() != enc_gcn2_out) {
      throw ConfigError("model: enc_mlp2 input must equal enc_gcn2_out");
    }
    if (attn_mlp.front() != attn_gat1_out * attn_gat1_heads) {
      throw ConfigError("model: attn_mlp input must equal attn_gat1_heads * attn_gat1_out");
    }
    if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
      throw ConfigError("model: dropout must be in [0, 1)");
    }
  }
};

namespace model_detail {

inline void create_linear(ad::ParamStore& store, const std::string& prefix, int d_in, int d_out,
                          std::mt19937_64& rng) {
  glorot_init(store.create(prefix + ".weight", d_in, d_out), d_in, d_out, rng);
  store.create(prefix + ".bias", 1, d_out);  // zeros
}

inline void create_mlp(ad::ParamStore& store, const std::string& prefix,
                       const std::vector<int>& dims, std::mt19937_64& rng) {
  for (size_t i = 0; i + 1 < dims.size(); ++i) {
    create_linear(store, prefix + "." + std::to_string(i), dims[i], dims[i + 1], rng);
  }
}

inline void create_gat(ad::ParamStore& store, const std::string& prefix, int d_in, int d_out,
                       int heads, std::mt19937_64& rng) {
  create_linear(store, prefix + ".src", d_in, heads * d_out, rng);
  create_linear(store, prefix + ".dst", d_in, heads * d_out, rng);
  glorot_init(store.create(prefix + ".att", heads, d_out), d_out, 1, rng);
}

inline ad::Value mlp_forward(const ad::Value& x, const ad::ParamMap& p, const std::string& prefix,
                             size_t layers) {
  ad::Value h = x;
  for (size_t i = 0; i < layers; ++i) {
    const std::string base = prefix + "." + std::to_string(i);
    h = ad::linear(h, p.at(base + ".weight"), p.at(base + ".bias"));
    if (i + 1 < layers) h = ad::relu(h);
  }
  return h;
}

inline ad::GatParams gat_params(const ad::ParamMap& p, const std::string& prefix) {
  return {p.at(prefix + ".src.weight"), p.at(prefix + ".src.bias"), p.at(prefix + ".dst.weight"),
          p.at(prefix + ".dst.bias"), p.at(prefix + ".att")};
}

}  // namespace model_detail

/// Creates all trainable parameters (Glorot-uniform weights, zero biases) in a
/// fixed, seed-deterministic order.
inline void init_params(ad::ParamStore& store, const NetConfig& cfg, uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  model_detail::create_linear(store, "encoder.gcn1", cfg.input_dim, cfg.enc_gcn1_out, rng);
  model_detail::create_mlp(store, "encoder.mlp1", cfg.enc_mlp1, rng);
  model_detail::create_linear(store, "encoder.gcn2", cfg.enc_mlp1.back(), cfg.enc_gcn2_out, rng);
  model_detail::create_mlp(store, "encoder.mlp2", cfg.enc_mlp2, rng);
  model_detail::create_gat(store, "attn.gat1", cfg.enc_mlp2.back(), cfg.attn_gat1_out,
                           cfg.attn_gat1_heads, rng);
  model_detail::create_mlp(store, "attn.mlp", cfg.attn_mlp, rng);
  model_detail::create_gat(store, "attn.gat2", cfg.attn_mlp.back(), cfg.attn_gat2_out,
                           cfg.attn_gat2_heads, rng);
}

inline size_t parameter_count(const ad::ParamStore& store) { return store.total_count(); }

/// The cross-graph flattened for the network: node positions (k nodes first,
/// then l nodes), intra-scan adjacency for the encoder, and the candidate
/// edges for the attention stage.
struct NetInputs {
  int nk = 0;
  int nl = 0;
  ad::Value positions;            // constant [n x 3]
  ad::SparseAdjacency intra;      // E_k union E_l, global indices
  ad::SparseAdjacency cross;      // E_kl, src in k, dst in l (global)
  ad::SparseAdjacency cross_with_self;  // E_kl plus a self-loop on every node
  std::shared_ptr<const ad::GcnNorm> intra_norm;  // cached convolution coefficients
  std::vector<int> l_point_nodes;       // global indices of corner/surface nodes in l
  std::vector<int> k_point_nodes;
};

inline NetInputs assemble_inputs(const CrossGraph& cg) {
  NetInputs in;
  in.nk = static_cast<int>(cg.k.nodes.size());
  in.nl = static_cast<int>(cg.l.nodes.size());
  const int n = in.nk + in.nl;

  in.positions = ad::make_node(n, 3);
  for (int i = 0; i < in.nk; ++i) {
    for (int c = 0; c < 3; ++c) in.positions->at(i, c) = cg.k.nodes[static_cast<size_t>(i)].pos[c];
  }
  for (int i = 0; i < in.nl; ++i) {
    for (int c = 0; c < 3; ++c) {
      in.positions->at(in.nk + i, c) = cg.l.nodes[static_cast<size_t>(i)].pos[c];
    }
  }

  in.intra.n = n;
  for (const auto& e : cg.k.edges) {
    in.intra.src.push_back(e[0]);
    in.intra.dst.push_back(e[1]);
  }
  for (const auto& e : cg.l.edges) {
    in.intra.src.push_back(e[0] + in.nk);
    in.intra.dst.push_back(e[1] + in.nk);
  }

  in.cross.n = n;
  in.cross_with_self.n = n;
  for (const auto& e : cg.cross_edges) {
    in.cross.src.push_back(e[0]);
    in.cross.dst.push_back(e[1] + in.nk);
    in.cross_with_self.src.push_back(e[0]);
    in.cross_with_self.dst.push_back(e[1] + in.nk);
  }
  for (int i = 0; i < n; ++i) {
    in.cross_with_self.src.push_back(i);
    in.cross_with_self.dst.push_back(i);
  }

  in.intra_norm = std::make_shared<const ad::GcnNorm>(ad::GcnNorm::build(in.intra));

  for (size_t i = 0; i < cg.k.nodes.size(); ++i) {
    if (is_point_feature(cg.k.nodes[i].feature)) in.k_point_nodes.push_back(static_cast<int>(i));
  }
  for (size_t i = 0; i < cg.l.nodes.size(); ++i) {
    if (is_point_feature(cg.l.nodes[i].feature)) {
      in.l_point_nodes.push_back(static_cast<int>(i) + in.nk);
    }
  }
  return in;
}

namespace model_detail {

inline void require_pruned(const NetInputs& in) {
  std::vector<char> has_cross(static_cast<size_t>(in.nk + in.nl), 0);
  for (int s : in.cross.src) has_cross[static_cast<size_t>(s)] = 1;
  for (int d : in.cross.dst) has_cross[static_cast<size_t>(d)] = 1;
  for (int node : in.l_point_nodes) {
    if (!has_cross[static_cast<size_t>(node)]) {
      throw ContractError("graph is not pruned: l-side node " + std::to_string(node) +
                          " has no cross-edge candidate");
    }
  }
  for (int node : in.k_point_nodes) {
    if (!has_cross[static_cast<size_t>(node)]) {
      throw ContractError("graph is not pruned: k-side node " + std::to_string(node) +
                          " has no cross-edge candidate");
    }
  }
}

}  // namespace model_detail

/// Deterministic dropout seeding: one stream per forward pass, advanced per
/// dropout site.
struct ForwardCtx {
  bool training = false;
  uint64_t seed = 0;
  int site = 0;

  uint64_t next_seed() { return splitmix64(seed ^ (0x9e3779b9u + static_cast<uint64_t>(site++))); }
};

/// Two GCN stages with MLP heads, message passing restricted to the
/// single-graph edges; dropout after each GCN while training. Output is the
/// [n x embedding_dim] keypoint table.
inline ad::Value encode_keypoints(const NetInputs& in, const ad::ParamMap& params,
                                  const NetConfig& cfg, ForwardCtx& ctx) {
  model_detail::require_pruned(in);
  auto norm = in.intra_norm ? in.intra_norm
                            : std::make_shared<const ad::GcnNorm>(ad::GcnNorm::build(in.intra));

  ad::Value h = ad::linear(ad::gcn_aggregate(in.positions, norm), params.at("encoder.gcn1.weight"),
                           params.at("encoder.gcn1.bias"));
  h = ad::dropout(h, cfg.dropout_rate, ctx.training, ctx.next_seed());
  h = model_detail::mlp_forward(h, params, "encoder.mlp1", cfg.enc_mlp1.size() - 1);
  h = ad::linear(ad::gcn_aggregate(h, norm), params.at("encoder.gcn2.weight"),
                 params.at("encoder.gcn2.bias"));
  h = ad::dropout(h, cfg.dropout_rate, ctx.training, ctx.next_seed());
  h = model_detail::mlp_forward(h, params, "encoder.mlp2", cfg.enc_mlp2.size() - 1);
  return h;
}

/// Per-cross-edge confidence weights, aligned with the cross-edge order.
struct EdgeWeights {
  ad::Value node;  // [E x 1]

  std::vector<double> values() const { return node->val; }
  size_t size() const { return node->size(); }
};

/// Attention stage. The first GAT layer runs over the cross edges plus
/// self-loops so nodes on both sides keep a projected representation; the
/// final layer runs over the cross edges alone, which makes its attention
/// coefficients a per-destination simplex over the candidates of each l-side
/// node. Those coefficients are the returned weights.
inline EdgeWeights cross_attention(const ad::Value& embeddings, const NetInputs& in,
                                   const ad::ParamMap& params, const NetConfig& cfg,
                                   ForwardCtx& ctx) {
  model_detail::require_pruned(in);
  if (in.cross.edge_count() == 0) throw ContractError("cross graph has no candidate edges");

  ad::GatOutput gat1 =
      ad::gatv2_layer(embeddings, in.cross_with_self, cfg.attn_gat1_heads,
                      model_detail::gat_params(params, "attn.gat1"), cfg.leaky_slope);
  ad::Value h = model_detail::mlp_forward(gat1.features, params, "attn.mlp",
                                          cfg.attn_mlp.size() - 1);
  ad::GatOutput gat2 = ad::gatv2_layer(h, in.cross, cfg.attn_gat2_heads,
                                       model_detail::gat_params(params, "attn.gat2"),
                                       cfg.leaky_slope);

  // k-side nodes and l-side origin/centroid nodes legitimately receive no
  // cross message; an l-side point node in that list means an unpruned graph.
  std::vector<char> is_l_point(static_cast<size_t>(in.nk + in.nl), 0);
  for (int node : in.l_point_nodes) is_l_point[static_cast<size_t>(node)] = 1;
  for (int node : gat2.zero_in_degree) {
    if (is_l_point[static_cast<size_t>(node)]) {
      throw ContractError("l-side node " + std::to_string(node) + " lost all candidates");
    }
  }

  EdgeWeights out;
  if (cfg.attn_gat2_heads == 1) {
    out.node = gat2.attention;
  } else {
    // average the heads; the defaults use a single head
    out.node = ad::mul_scalar(ad::matmul(gat2.attention,
                                         ad::constant(cfg.attn_gat2_heads, 1,
                                                      std::vector<double>(
                                                          static_cast<size_t>(cfg.attn_gat2_heads),
                                                          1.0))),
                              1.0 / cfg.attn_gat2_heads);
  }
  return out;
}

/// Argmax edge per l-side destination node; ties resolve to the lower k-side
/// node index. Returns indices into the cross-edge array, ordered by
/// destination node.
inline std::vector<int> select_max_edges(const std::vector<double>& weights,
                                         const CrossGraph& cg) {
  if (weights.size() != cg.cross_edges.size()) {
    throw ShapeError("edge-weight count does not match cross-edge count");
  }
  std::map<int, int> best;  // l node -> edge index
  for (size_t e = 0; e < cg.cross_edges.size(); ++e) {
    const int l_node = cg.cross_edges[e][1];
    auto it = best.find(l_node);
    if (it == best.end()) {
      best[l_node] = static_cast<int>(e);
      continue;
    }
    const double w_new = weights[e];
    const double w_old = weights[static_cast<size_t>(it->second)];
    const int k_new = cg.cross_edges[e][0];
    const int k_old = cg.cross_edges[static_cast<size_t>(it->second)][0];
    if (w_new > w_old || (w_new == w_old && k_new < k_old)) it->second = static_cast<int>(e);
  }
  std::vector<int> out;
  out.reserve(best.size());
  for (const auto& [l_node, edge] : best) out.push_back(edge);
  return out;
}

}  // namespace semreg
