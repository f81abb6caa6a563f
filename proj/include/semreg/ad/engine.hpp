// Minimal reverse-mode differentiable computation over dense 2-D arrays plus
// the sparse graph aggregations the network needs. Nodes form an acyclic DAG;
// backward() traverses it in reverse topological order and accumulates (+=)
// gradients, so shared subexpressions and repeated backward passes compose.
// All buffers are 64-bit floats.
#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "semreg/errors.hpp"

namespace semreg::ad {

class Node;
using Value = std::shared_ptr<Node>;

class Node {
 public:
  int rows = 0;
  int cols = 0;
  std::vector<double> val;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<Value> parents;
  std::function<void(Node&)> backward_fn;  // pulls this->grad into the parents

  Node(int r, int c)
      : rows(r), cols(c), val(static_cast<size_t>(r) * c, 0.0),
        grad(static_cast<size_t>(r) * c, 0.0) {}

  size_t size() const { return val.size(); }
  double& at(int r, int c) { return val[static_cast<size_t>(r) * cols + c]; }
  double at(int r, int c) const { return val[static_cast<size_t>(r) * cols + c]; }
  double& grad_at(int r, int c) { return grad[static_cast<size_t>(r) * cols + c]; }

  std::string shape_str() const {
    return "[" + std::to_string(rows) + "x" + std::to_string(cols) + "]";
  }
};

inline Value make_node(int rows, int cols) { return std::make_shared<Node>(rows, cols); }

inline Value constant(int rows, int cols, const std::vector<double>& data) {
  Value v = make_node(rows, cols);
  if (data.size() != v->size()) throw ShapeError("constant data size mismatch");
  v->val = data;
  return v;
}

inline Value constant_like(const Eigen::MatrixXd& m) {
  Value v = make_node(static_cast<int>(m.rows()), static_cast<int>(m.cols()));
  for (int r = 0; r < m.rows(); ++r) {
    for (int c = 0; c < m.cols(); ++c) v->at(r, c) = m(r, c);
  }
  return v;
}

inline Value scalar(double x) {
  Value v = make_node(1, 1);
  v->val[0] = x;
  return v;
}

inline Value leaf(int rows, int cols) {
  Value v = make_node(rows, cols);
  v->requires_grad = true;
  return v;
}

inline Eigen::MatrixXd to_matrix(const Value& v) {
  Eigen::MatrixXd m(v->rows, v->cols);
  for (int r = 0; r < v->rows; ++r) {
    for (int c = 0; c < v->cols; ++c) m(r, c) = v->at(r, c);
  }
  return m;
}

namespace detail {

inline void require_same_shape(const Value& a, const Value& b, const char* op) {
  if (a->rows != b->rows || a->cols != b->cols) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a->shape_str() + " vs " +
                     b->shape_str());
  }
}

inline Value result_of(int rows, int cols, std::vector<Value> parents) {
  Value out = make_node(rows, cols);
  for (const auto& p : parents) out->requires_grad = out->requires_grad || p->requires_grad;
  out->parents = std::move(parents);
  return out;
}

}  // namespace detail

// --- elementwise ------------------------------------------------------------

inline Value add(const Value& a, const Value& b) {
  detail::require_same_shape(a, b, "add");
  Value out = detail::result_of(a->rows, a->cols, {a, b});
  for (size_t i = 0; i < out->size(); ++i) out->val[i] = a->val[i] + b->val[i];
  if (out->requires_grad) {
    out->backward_fn = [](Node& self) {
      Node& a = *self.parents[0];
      Node& b = *self.parents[1];
      for (size_t i = 0; i < self.size(); ++i) {
        if (a.requires_grad) a.grad[i] += self.grad[i];
        if (b.requires_grad) b.grad[i] += self.grad[i];
      }
    };
  }
  return out;
}

inline Value sub(const Value& a, const Value& b) {
  detail::require_same_shape(a, b, "sub");
  Value out = detail::result_of(a->rows, a->cols, {a, b});
  for (size_t i = 0; i < out->size(); ++i) out->val[i] = a->val[i] - b->val[i];
  if (out->requires_grad) {
    out->backward_fn = [](Node& self) {
      Node& a = *self.parents[0];
      Node& b = *self.parents[1];
      for (size_t i = 0; i < self.size(); ++i) {
        if (a.requires_grad) a.grad[i] += self.grad[i];
        if (b.requires_grad) b.grad[i] -= self.grad[i];
      }
    };
  }
  return out;
}

inline Value mul(const Value& a, const Value& b) {
  detail::require_same_shape(a, b, "mul");
  Value out = detail::result_of(a->rows, a->cols, {a, b});
  for (size_t i = 0; i < out->size(); ++i) out->val[i] = a->val[i] * b->val[i];
  if (out->requires_grad) {
    out->backward_fn = [](Node& self) {
      Node& a = *self.parents[0];
      Node& b = *self.parents[1];
      for (size_t i = 0; i < self.size(); ++i) {
        if (a.requires_grad) a.grad[i] += self.grad[i] * b.val[i];
        if (b.requires_grad) b.grad[i] += self.grad[i] * a.val[i];
      }
    };
  }
  return out;
}

inline Value add_scalar(const Value& a, double s) {
  Value out = detail::result_of(a->rows, a->cols, {a});
  for (size_t i = 0; i < out->size(); ++i) out->val[i] = a->val[i] + s;
  if (out->requires_grad) {
    out->backward_fn = [](Node& self) {
      Node& a = *self.parents[0];
      for (size_t i = 0; i < self.size(); ++i) a.grad[i] += self.grad[i];
    };
  }
  return out;
}

inline Value mul_scalar(const Value& a, double s) {
  Value out = detail::result_of(a->rows, a->cols, {a});
  for (size_t i = 0; i < out->size(); ++i) out->val[i] = a->val[i] * s;
  if (out->requires_grad) {
    out->backward_fn = [s](Node& self) {
      Node& a = *self.parents[0];
      for (size_t i = 0; i < self.size(); ++i) a.grad[i] += self.grad[i] * s;
    };
  }
  return out;
}

inline Value relu(const Value& a) {
  Value out = detail::result_of(a->rows, a->cols, {a});
  for (size_t i = 0; i < out->size(); ++i) out->val[i] = a->val[i] > 0.0 ? a->val[i] : 0.0;
  if (out->requires_grad) {
    out->backward_fn = [](Node& self) {
      Node& a = *self.parents[0];
      for (size_t i = 0; i < self.size(); ++i) {
        if (a.val[i] > 0.0) a.grad[i] += self.grad[i];
      }
    };
  }
  return out;
}

inline Value leaky_relu(const Value& a, double slope) {
  Value out = detail::result_of(a->rows, a->cols, {a});
  for (size_t i = 0; i < out->size(); ++i) {
    out->val[i] = a->val[i] > 0.0 ? a->val[i] : slope * a->val[i];
  }
  if (out->requires_grad) {
    out->backward_fn = [slope](Node& self) {
      Node& a = *self.parents[0];
      for (size_t i = 0; i < self.size(); ++i) {
        a.grad[i] += self.grad[i] * (a.val[i] > 0.0 ? 1.0 : slope);
      }
    };
  }
  return out;
}

inline Value log(const Value& a) {
  Value out = detail::result_of(a->rows, a->cols, {a});
  for (size_t i = 0; i < out->size(); ++i) out->val[i] = std::log(a->val[i]);
  if (out->requires_grad) {
    out->backward_fn = [](Node& self) {
      Node& a = *self.parents[0];
      for (size_t i = 0; i < self.size(); ++i) a.grad[i] += self.grad[i] / a.val[i];
    };
  }
  return out;
}

/// Square root with subgradient 0 at exactly 0.
inline Value sqrt(const Value& a) {
  Value out = detail::result_of(a->rows, a->cols, {a});
  for (size_t i = 0; i < out->size(); ++i) out->val[i] = std::sqrt(a->val[i]);
  if (out->requires_grad) {
    out->backward_fn = [](Node& self) {
      Node& a = *self.parents[0];
      for (size_t i = 0; i < self.size(); ++i) {
        if (self.val[i] > 0.0) a.grad[i] += self.grad[i] / (2.0 * self.val[i]);
      }
    };
  }
  return out;
}

/// Gradient passes where lo <= a <= hi and is zero outside.
inline Value clamp(const Value& a, double lo, double hi) {
  Value out = detail::result_of(a->rows, a->cols, {a});
  for (size_t i = 0; i < out->size(); ++i) out->val[i] = std::clamp(a->val[i], lo, hi);
  if (out->requires_grad) {
    out->backward_fn = [lo, hi](Node& self) {
      Node& a = *self.parents[0];
      for (size_t i = 0; i < self.size(); ++i) {
        if (a.val[i] >= lo && a.val[i] <= hi) a.grad[i] += self.grad[i];
      }
    };
  }
  return out;
}

// --- reductions and reshapes ------------------------------------------------

inline Value sum(const Value& a) {
  Value out = detail::result_of(1, 1, {a});
  double s = 0.0;
  for (double v : a->val) s += v;
  out->val[0] = s;
  if (out->requires_grad) {
    out->backward_fn = [](Node& self) {
      Node& a = *self.parents[0];
      for (size_t i = 0; i < a.size(); ++i) a.grad[i] += self.grad[0];
    };
  }
  return out;
}

inline Value transpose(const Value& a) {
  Value out = detail::result_of(a->cols, a->rows, {a});
  for (int r = 0; r < a->rows; ++r) {
    for (int c = 0; c < a->cols; ++c) out->at(c, r) = a->at(r, c);
  }
  if (out->requires_grad) {
    out->backward_fn = [](Node& self) {
      Node& a = *self.parents[0];
      for (int r = 0; r < self.rows; ++r) {
        for (int c = 0; c < self.cols; ++c) a.grad_at(c, r) += self.grad_at(r, c);
      }
    };
  }
  return out;
}

inline Value gather_rows(const Value& a, std::shared_ptr<const std::vector<int>> indices) {
  for (int idx : *indices) {
    if (idx < 0 || idx >= a->rows) throw ShapeError("gather_rows: index out of range");
  }
  Value out = detail::result_of(static_cast<int>(indices->size()), a->cols, {a});
  for (size_t r = 0; r < indices->size(); ++r) {
    for (int c = 0; c < a->cols; ++c) out->at(static_cast<int>(r), c) = a->at((*indices)[r], c);
  }
  if (out->requires_grad) {
    out->backward_fn = [indices](Node& self) {
      Node& a = *self.parents[0];
      for (size_t r = 0; r < indices->size(); ++r) {
        for (int c = 0; c < self.cols; ++c) {
          a.grad_at((*indices)[r], c) += self.grad_at(static_cast<int>(r), c);
        }
      }
    };
  }
  return out;
}

inline Value gather_rows(const Value& a, const std::vector<int>& indices) {
  return gather_rows(a, std::make_shared<const std::vector<int>>(indices));
}

// --- broadcast helpers --------------------------------------------------

inline Value add_rowvec(const Value& a, const Value& rv) {
  if (rv->rows != 1 || rv->cols != a->cols) {
    throw ShapeError("add_rowvec: " + a->shape_str() + " vs " + rv->shape_str());
  }
  Value out = detail::result_of(a->rows, a->cols, {a, rv});
  for (int r = 0; r < a->rows; ++r) {
    for (int c = 0; c < a->cols; ++c) out->at(r, c) = a->at(r, c) + rv->val[static_cast<size_t>(c)];
  }
  if (out->requires_grad) {
    out->backward_fn = [](Node& self) {
      Node& a = *self.parents[0];
      Node& rv = *self.parents[1];
      for (int r = 0; r < self.rows; ++r) {
        for (int c = 0; c < self.cols; ++c) {
          if (a.requires_grad) a.grad_at(r, c) += self.grad_at(r, c);
          if (rv.requires_grad) rv.grad[static_cast<size_t>(c)] += self.grad_at(r, c);
        }
      }
    };
  }
  return out;
}

inline Value sub_rowvec(const Value& a, const Value& rv) {
  return add_rowvec(a, mul_scalar(rv, -1.0));
}

inline Value scale_rows(const Value& a, const Value& w) {
  if (w->cols != 1 || w->rows != a->rows) {
    throw ShapeError("scale_rows: " + a->shape_str() + " vs " + w->shape_str());
  }
  Value out = detail::result_of(a->rows, a->cols, {a, w});
  for (int r = 0; r < a->rows; ++r) {
    for (int c = 0; c < a->cols; ++c) out->at(r, c) = a->at(r, c) * w->val[static_cast<size_t>(r)];
  }
  if (out->requires_grad) {
    out->backward_fn = [](Node& self) {
      Node& a = *self.parents[0];
      Node& w = *self.parents[1];
      for (int r = 0; r < self.rows; ++r) {
        for (int c = 0; c < self.cols; ++c) {
          if (a.requires_grad) a.grad_at(r, c) += self.grad_at(r, c) * w.val[static_cast<size_t>(r)];
          if (w.requires_grad) w.grad[static_cast<size_t>(r)] += self.grad_at(r, c) * a.at(r, c);
        }
      }
    };
  }
  return out;
}

inline Value div_by_scalar(const Value& a, const Value& s) {
  if (s->size() != 1) throw ShapeError("div_by_scalar: divisor must be 1x1");
  Value out = detail::result_of(a->rows, a->cols, {a, s});
  const double sv = s->val[0];
  for (size_t i = 0; i < out->size(); ++i) out->val[i] = a->val[i] / sv;
  if (out->requires_grad) {
    out->backward_fn = [](Node& self) {
      Node& a = *self.parents[0];
      Node& s = *self.parents[1];
      const double sv = s.val[0];
      double dot = 0.0;
      for (size_t i = 0; i < self.size(); ++i) {
        if (a.requires_grad) a.grad[i] += self.grad[i] / sv;
        dot += self.val[i] * self.grad[i];
      }
      if (s.requires_grad) s.grad[0] -= dot / sv;
    };
  }
  return out;
}

// --- matrix product and the affine layer -------------------------------------

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

// c[n x k] += a[n x m] * b[m x k]
inline void matmul_accum(const double* a, const double* b, double* c, int n, int m, int k) {
  MutMap(c, n, k).noalias() += ConstMap(a, n, m) * ConstMap(b, m, k);
}

// c[n x k] += a[n x m] * b[k x m]^T
inline void matmul_bt_accum(const double* a, const double* b, double* c, int n, int m, int k) {
  MutMap(c, n, k).noalias() += ConstMap(a, n, m) * ConstMap(b, k, m).transpose();
}

// c[m x k] += a[n x m]^T * b[n x k]
inline void matmul_at_accum(const double* a, const double* b, double* c, int n, int m, int k) {
  MutMap(c, m, k).noalias() += ConstMap(a, n, m).transpose() * ConstMap(b, n, k);
}

}  // namespace detail

inline Value matmul(const Value& a, const Value& b) {
  if (a->cols != b->rows) {
    throw ShapeError("matmul: " + a->shape_str() + " vs " + b->shape_str());
  }
  Value out = detail::result_of(a->rows, b->cols, {a, b});
  detail::matmul_accum(a->val.data(), b->val.data(), out->val.data(), a->rows, a->cols, b->cols);
  if (out->requires_grad) {
    out->backward_fn = [](Node& self) {
      Node& a = *self.parents[0];
      Node& b = *self.parents[1];
      if (a.requires_grad) {
        detail::matmul_bt_accum(self.grad.data(), b.val.data(), a.grad.data(), a.rows, b.cols,
                                a.cols);
      }
      if (b.requires_grad) {
        detail::matmul_at_accum(a.val.data(), self.grad.data(), b.grad.data(), a.rows, a.cols,
                                b.cols);
      }
    };
  }
  return out;
}

/// y = x * W + b. Pass a null bias to skip it.
inline Value linear(const Value& x, const Value& weights, const Value& bias) {
  if (x->cols != weights->rows) {
    throw ShapeError("linear: input " + x->shape_str() + " vs weights " + weights->shape_str());
  }
  if (bias && (bias->rows != 1 || bias->cols != weights->cols)) {
    throw ShapeError("linear: bias " + bias->shape_str() + " vs weights " + weights->shape_str());
  }
  Value y = matmul(x, weights);
  return bias ? add_rowvec(y, bias) : y;
}

// --- dropout -----------------------------------------------------------------

/// Training: zeroes each element with probability `rate` and scales survivors
/// by 1/(1-rate); inference: identity. Deterministic given the seed.
inline Value dropout(const Value& x, double rate, bool training, uint64_t seed) {
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout rate must be in [0, 1)");
  if (!training || rate == 0.0) return x;
  auto mask = std::make_shared<std::vector<uint8_t>>(x->size());
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double scale = 1.0 / (1.0 - rate);
  Value out = detail::result_of(x->rows, x->cols, {x});
  for (size_t i = 0; i < x->size(); ++i) {
    (*mask)[i] = unit(rng) >= rate ? 1 : 0;
    out->val[i] = (*mask)[i] ? x->val[i] * scale : 0.0;
  }
  if (out->requires_grad) {
    out->backward_fn = [mask, scale](Node& self) {
      Node& x = *self.parents[0];
      for (size_t i = 0; i < self.size(); ++i) {
        if ((*mask)[i]) x.grad[i] += self.grad[i] * scale;
      }
    };
  }
  return out;
}

// --- sparse graph aggregation -------------------------------------------------

/// Directed edge list over n nodes; messages flow src -> dst.
struct SparseAdjacency {
  int n = 0;
  std::vector<int> src;
  std::vector<int> dst;

  size_t edge_count() const { return src.size(); }

  void validate() const {
    if (src.size() != dst.size()) throw ShapeError("adjacency src/dst length mismatch");
    std::set<std::pair<int, int>> seen;
    for (size_t e = 0; e < src.size(); ++e) {
      if (src[e] < 0 || src[e] >= n || dst[e] < 0 || dst[e] >= n) {
        throw ShapeError("adjacency index out of range");
      }
      if (!seen.emplace(src[e], dst[e]).second) {
        throw ShapeError("duplicate edge (" + std::to_string(src[e]) + "," +
                         std::to_string(dst[e]) + ")");
      }
    }
  }
};

/// Degree-normalised convolution coefficients: A is symmetrised, self-loops
/// added, entries weighted 1/sqrt(deg_src * deg_dst).
struct GcnNorm {
  int n = 0;
  std::vector<int> src;
  std::vector<int> dst;
  std::vector<double> coef;

  static GcnNorm build(const SparseAdjacency& adj) {
    adj.validate();
    std::set<std::pair<int, int>> sym;
    for (size_t e = 0; e < adj.src.size(); ++e) {
      if (adj.src[e] == adj.dst[e]) continue;  // self-loops re-added below
      sym.emplace(adj.src[e], adj.dst[e]);
      sym.emplace(adj.dst[e], adj.src[e]);
    }
    std::vector<double> deg(static_cast<size_t>(adj.n), 1.0);  // self-loop
    for (const auto& [s, d] : sym) deg[static_cast<size_t>(d)] += 1.0;
    GcnNorm norm;
    norm.n = adj.n;
    for (int i = 0; i < adj.n; ++i) {
      norm.src.push_back(i);
      norm.dst.push_back(i);
      norm.coef.push_back(1.0 / deg[static_cast<size_t>(i)]);
    }
    for (const auto& [s, d] : sym) {
      norm.src.push_back(s);
      norm.dst.push_back(d);
      norm.coef.push_back(1.0 / std::sqrt(deg[static_cast<size_t>(s)] * deg[static_cast<size_t>(d)]));
    }
    return norm;
  }
};

inline Value gcn_aggregate(const Value& x, std::shared_ptr<const GcnNorm> norm) {
  if (x->rows != norm->n) throw ShapeError("gcn_aggregate: node count mismatch");
  Value out = detail::result_of(x->rows, x->cols, {x});
  for (size_t e = 0; e < norm->src.size(); ++e) {
    const double c = norm->coef[e];
    const int s = norm->src[e], d = norm->dst[e];
    for (int j = 0; j < x->cols; ++j) out->at(d, j) += c * x->at(s, j);
  }
  if (out->requires_grad) {
    out->backward_fn = [norm](Node& self) {
      Node& x = *self.parents[0];
      for (size_t e = 0; e < norm->src.size(); ++e) {
        const double c = norm->coef[e];
        const int s = norm->src[e], d = norm->dst[e];
        for (int j = 0; j < self.cols; ++j) x.grad_at(s, j) += c * self.grad_at(d, j);
      }
    };
  }
  return out;
}

/// out = normalised-adjacency * x * W + b (Kipf-style convolution).
inline Value gcn_layer(const Value& x, const SparseAdjacency& adj, const Value& weights,
                       const Value& bias) {
  auto norm = std::make_shared<const GcnNorm>(GcnNorm::build(adj));
  return linear(gcn_aggregate(x, norm), weights, bias);
}

/// Per-head score s[e,h] = dot(act[e, h*d : (h+1)*d], att[h, :]).
inline Value head_scores(const Value& act, const Value& att) {
  const int heads = att->rows;
  const int dim = att->cols;
  if (act->cols != heads * dim) {
    throw ShapeError("head_scores: " + act->shape_str() + " vs " + att->shape_str());
  }
  Value out = detail::result_of(act->rows, heads, {act, att});
  for (int e = 0; e < act->rows; ++e) {
    for (int h = 0; h < heads; ++h) {
      double acc = 0.0;
      for (int j = 0; j < dim; ++j) acc += act->at(e, h * dim + j) * att->at(h, j);
      out->at(e, h) = acc;
    }
  }
  if (out->requires_grad) {
    out->backward_fn = [heads, dim](Node& self) {
      Node& act = *self.parents[0];
      Node& att = *self.parents[1];
      for (int e = 0; e < act.rows; ++e) {
        for (int h = 0; h < heads; ++h) {
          const double g = self.grad_at(e, h);
          if (g == 0.0) continue;
          for (int j = 0; j < dim; ++j) {
            if (act.requires_grad) act.grad_at(e, h * dim + j) += g * att.at(h, j);
            if (att.requires_grad) att.grad_at(h, j) += g * act.at(e, h * dim + j);
          }
        }
      }
    };
  }
  return out;
}

/// Softmax over the in-edges of each destination node, per head; numerically
/// stabilised by max subtraction. Destinations without in-edges simply have no
/// coefficients.
inline Value edge_softmax(const Value& scores, std::shared_ptr<const std::vector<int>> dst,
                          int n_nodes) {
  if (static_cast<int>(dst->size()) != scores->rows) {
    throw ShapeError("edge_softmax: destination list length mismatch");
  }
  auto groups = std::make_shared<std::vector<std::vector<int>>>(static_cast<size_t>(n_nodes));
  for (size_t e = 0; e < dst->size(); ++e) {
    const int d = (*dst)[e];
    if (d < 0 || d >= n_nodes) throw ShapeError("edge_softmax: destination out of range");
    (*groups)[static_cast<size_t>(d)].push_back(static_cast<int>(e));
  }
  const int heads = scores->cols;
  Value out = detail::result_of(scores->rows, heads, {scores});
  for (const auto& group : *groups) {
    if (group.empty()) continue;
    for (int h = 0; h < heads; ++h) {
      double mx = -std::numeric_limits<double>::infinity();
      for (int e : group) mx = std::max(mx, scores->at(e, h));
      double denom = 0.0;
      for (int e : group) {
        out->at(e, h) = std::exp(scores->at(e, h) - mx);
        denom += out->at(e, h);
      }
      for (int e : group) out->at(e, h) /= denom;
    }
  }
  if (out->requires_grad) {
    out->backward_fn = [groups, heads](Node& self) {
      Node& scores = *self.parents[0];
      for (const auto& group : *groups) {
        if (group.empty()) continue;
        for (int h = 0; h < heads; ++h) {
          double inner = 0.0;
          for (int e : group) inner += self.grad_at(e, h) * self.at(e, h);
          for (int e : group) {
            scores.grad_at(e, h) += self.at(e, h) * (self.grad_at(e, h) - inner);
          }
        }
      }
    };
  }
  return out;
}

/// out[dst_e, h*d+j] += alpha[e,h] * feat[e, h*d+j]; rows of destinations with
/// no in-edges stay zero.
inline Value attn_aggregate(const Value& alpha, const Value& feat,
                            std::shared_ptr<const std::vector<int>> dst, int n_nodes) {
  const int heads = alpha->cols;
  if (feat->rows != alpha->rows || feat->cols % heads != 0) {
    throw ShapeError("attn_aggregate: " + alpha->shape_str() + " vs " + feat->shape_str());
  }
  const int dim = feat->cols / heads;
  Value out = detail::result_of(n_nodes, feat->cols, {alpha, feat});
  for (int e = 0; e < alpha->rows; ++e) {
    const int d = (*dst)[static_cast<size_t>(e)];
    for (int h = 0; h < heads; ++h) {
      const double a = alpha->at(e, h);
      for (int j = 0; j < dim; ++j) out->at(d, h * dim + j) += a * feat->at(e, h * dim + j);
    }
  }
  if (out->requires_grad) {
    out->backward_fn = [dst, heads, dim](Node& self) {
      Node& alpha = *self.parents[0];
      Node& feat = *self.parents[1];
      for (int e = 0; e < alpha.rows; ++e) {
        const int d = (*dst)[static_cast<size_t>(e)];
        for (int h = 0; h < heads; ++h) {
          double adot = 0.0;
          for (int j = 0; j < dim; ++j) {
            const double g = self.grad_at(d, h * dim + j);
            adot += feat.at(e, h * dim + j) * g;
            if (feat.requires_grad) feat.grad_at(e, h * dim + j) += alpha.at(e, h) * g;
          }
          if (alpha.requires_grad) alpha.grad_at(e, h) += adot;
        }
      }
    };
  }
  return out;
}

struct GatParams {
  Value w_src;  // [d_in x heads*d_out], projects source features (aggregated)
  Value b_src;
  Value w_dst;  // [d_in x heads*d_out], projects destination features (score only)
  Value b_dst;
  Value att;  // [heads x d_out]
};

struct GatOutput {
  Value features;             // [n x heads*d_out]
  Value attention;            // [E x heads], per-destination softmax
  std::vector<int> zero_in_degree;  // destinations that received no message
};

/// GATv2 attention layer. Per edge (i -> j):
///   e_ij = att_h . leaky_relu(W_src h_i + W_dst h_j)
///   alpha = softmax of e over the in-edges of j
///   out_j = sum_i alpha_ij (W_src h_i)
/// so nodes with zero in-degree output exact zeros (and are reported).
inline GatOutput gatv2_layer(const Value& x, const SparseAdjacency& adj, int heads,
                             const GatParams& p, double negative_slope) {
  adj.validate();
  if (adj.n != x->rows) throw ShapeError("gatv2_layer: node count mismatch");
  if (p.att->rows != heads) throw ShapeError("gatv2_layer: attention vector head mismatch");
  auto src = std::make_shared<const std::vector<int>>(adj.src);
  auto dst = std::make_shared<const std::vector<int>>(adj.dst);

  Value xs = linear(x, p.w_src, p.b_src);
  Value xd = linear(x, p.w_dst, p.b_dst);
  Value es = gather_rows(xs, src);
  Value ed = gather_rows(xd, dst);
  Value act = leaky_relu(add(es, ed), negative_slope);
  Value scores = head_scores(act, p.att);
  Value alpha = edge_softmax(scores, dst, adj.n);
  Value out = attn_aggregate(alpha, es, dst, adj.n);

  GatOutput result;
  result.features = out;
  result.attention = alpha;
  std::vector<char> has_in(static_cast<size_t>(adj.n), 0);
  for (int d : adj.dst) has_in[static_cast<size_t>(d)] = 1;
  for (int i = 0; i < adj.n; ++i) {
    if (!has_in[static_cast<size_t>(i)]) result.zero_in_degree.push_back(i);
  }
  return result;
}

// --- rotation from the cross-covariance --------------------------------------

/// Orthogonal-Procrustes rotation of a 3x3 cross-covariance: H = U S V^T,
/// R = V diag(1,1,det(VU^T)) U^T. The backward pass runs the SVD adjoint with
/// F_ij = 1/(s_j^2 - s_i^2); when singular values come within `tol` of each
/// other the adjoint is ill-posed and *degenerate is set at forward time.
inline Value svd_rotation(const Value& h, double tol, std::shared_ptr<bool> degenerate) {
  if (h->rows != 3 || h->cols != 3) throw ShapeError("svd_rotation expects a 3x3 input");
  Eigen::Matrix3d hm = to_matrix(h);
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(hm, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Matrix3d u = svd.matrixU();
  const Eigen::Matrix3d v = svd.matrixV();
  const Eigen::Vector3d s = svd.singularValues();
  Eigen::Vector3d dsign(1.0, 1.0, (v * u.transpose()).determinant() < 0.0 ? -1.0 : 1.0);
  const Eigen::Matrix3d r = v * dsign.asDiagonal() * u.transpose();

  if (degenerate) {
    *degenerate = false;
    for (int i = 0; i < 3; ++i) {
      for (int j = i + 1; j < 3; ++j) {
        if (std::abs(s[i] - s[j]) < tol) *degenerate = true;
      }
    }
  }

  Value out = detail::result_of(3, 3, {h});
  for (int rr = 0; rr < 3; ++rr) {
    for (int cc = 0; cc < 3; ++cc) out->at(rr, cc) = r(rr, cc);
  }
  if (out->requires_grad) {
    out->backward_fn = [u, v, s, dsign](Node& self) {
      Node& h = *self.parents[0];
      Eigen::Matrix3d rbar;
      for (int rr = 0; rr < 3; ++rr) {
        for (int cc = 0; cc < 3; ++cc) rbar(rr, cc) = self.grad_at(rr, cc);
      }
      // R = V D U^T with D treated as locally constant
      const Eigen::Matrix3d d = dsign.asDiagonal();
      const Eigen::Matrix3d vbar = rbar * u * d;
      const Eigen::Matrix3d ubar = rbar.transpose() * v * d;
      Eigen::Matrix3d f = Eigen::Matrix3d::Zero();
      for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
          if (i == j) continue;
          const double denom = (s[j] - s[i]) * (s[j] + s[i]);
          f(i, j) = std::abs(denom) < 1e-300 ? 0.0 : 1.0 / denom;
        }
      }
      const Eigen::Matrix3d ut_ubar = u.transpose() * ubar;
      const Eigen::Matrix3d vt_vbar = v.transpose() * vbar;
      const Eigen::Matrix3d inner =
          f.cwiseProduct(ut_ubar - ut_ubar.transpose()) * s.asDiagonal().toDenseMatrix() +
          s.asDiagonal().toDenseMatrix() * f.cwiseProduct(vt_vbar - vt_vbar.transpose());
      const Eigen::Matrix3d hbar = u * inner * v.transpose();
      for (int rr = 0; rr < 3; ++rr) {
        for (int cc = 0; cc < 3; ++cc) h.grad_at(rr, cc) += hbar(rr, cc);
      }
    };
  }
  return out;
}

// --- backward traversal -------------------------------------------------------

namespace detail {

inline std::vector<Node*> topo_order(const std::vector<Value>& roots) {
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  struct Frame {
    Node* node;
    size_t next_parent;
  };
  std::vector<Frame> stack;
  for (const auto& root : roots) {
    if (!root || visited.count(root.get())) continue;
    stack.push_back({root.get(), 0});
    visited.insert(root.get());
    while (!stack.empty()) {
      Frame& top = stack.back();
      if (top.next_parent < top.node->parents.size()) {
        Node* parent = top.node->parents[top.next_parent++].get();
        if (!visited.count(parent)) {
          visited.insert(parent);
          stack.push_back({parent, 0});
        }
      } else {
        order.push_back(top.node);
        stack.pop_back();
      }
    }
  }
  return order;  // parents before children
}

}  // namespace detail

/// Runs the reverse sweep from roots whose gradients the caller pre-seeded.
inline void run_backward(const std::vector<Value>& roots) {
  std::vector<Node*> order = detail::topo_order(roots);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward_fn) node->backward_fn(*node);
  }
}

/// Standard entry point: seeds the scalar root's gradient with 1 and sweeps.
inline void backward(const Value& root) {
  if (root->size() != 1) {
    throw ShapeError("backward root must be scalar, got " + root->shape_str());
  }
  root->grad[0] += 1.0;
  run_backward({root});
}

}  // namespace semreg::ad
