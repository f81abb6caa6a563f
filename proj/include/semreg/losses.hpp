// Ground-truth match extraction and the two training losses: class-weighted
// binary cross-entropy on the attention weights and the pose loss
// L_p = alpha * tr(I - R_gt^T R) + ||t_gt - t||.
#pragma once

#include <cstdint>
#include <limits>
#include <vector>

#include "semreg/ad/engine.hpp"
#include "semreg/errors.hpp"
#include "semreg/graph.hpp"
#include "semreg/procrustes.hpp"

namespace semreg {

struct GtMatchLabels {
  std::vector<uint8_t> labels;  // one per cross edge
  size_t positives = 0;
  size_t negatives = 0;
};

/// Transforms the k-side point nodes by the ground-truth pose; for each l-side
/// point node, its nearest transformed k-side point node within `radius`
/// defines the positive edge if that edge exists. Equidistant candidates
/// resolve to the lower k node index.
inline GtMatchLabels extract_gt_matches(const CrossGraph& cg, const PoseSE3& gt, double radius) {
  if (radius <= 0.0) throw ConfigError("ground-truth match radius must be positive");
  GtMatchLabels out;
  out.labels.assign(cg.cross_edges.size(), 0);

  std::vector<int> k_points;
  std::vector<Eigen::Vector3d> k_transformed(cg.k.nodes.size());
  for (size_t i = 0; i < cg.k.nodes.size(); ++i) {
    if (is_point_feature(cg.k.nodes[i].feature)) {
      k_points.push_back(static_cast<int>(i));
      k_transformed[i] = gt.apply(cg.k.nodes[i].pos);
    }
  }

  // nearest transformed k node per l node
  std::vector<int> nearest(cg.l.nodes.size(), -1);
  for (size_t j = 0; j < cg.l.nodes.size(); ++j) {
    if (!is_point_feature(cg.l.nodes[j].feature)) continue;
    double best = radius * radius;
    int best_k = -1;
    for (int ki : k_points) {
      const double d2 = (k_transformed[static_cast<size_t>(ki)] - cg.l.nodes[j].pos).squaredNorm();
      if (d2 < best || (d2 == best && best_k >= 0 && ki < best_k)) {
        best = d2;
        best_k = ki;
      }
    }
    nearest[j] = best_k;
  }

  for (size_t e = 0; e < cg.cross_edges.size(); ++e) {
    const auto& edge = cg.cross_edges[e];
    if (nearest[static_cast<size_t>(edge[1])] == edge[0]) {
      out.labels[e] = 1;
      ++out.positives;
    } else {
      ++out.negatives;
    }
  }
  return out;
}

/// Class-imbalance weight for the positive term: #negatives / #positives.
/// All-positive label sets fall back to 1 (no reweighting needed); zero
/// positives leave the ratio undefined and the pair should be skipped.
inline double imbalance_weight(const GtMatchLabels& labels) {
  if (labels.positives == 0) {
    throw DegenerateError("no positive ground-truth matches; imbalance weight undefined");
  }
  if (labels.negatives == 0) return 1.0;
  return static_cast<double>(labels.negatives) / static_cast<double>(labels.positives);
}

/// Mean binary cross-entropy with the positive term scaled by `pos_weight`;
/// predictions are clamped to [eps, 1-eps] before the logs.
inline ad::Value attention_loss(const ad::Value& weights, const std::vector<uint8_t>& labels,
                                double pos_weight, double eps = 1e-12) {
  const size_t m = labels.size();
  if (weights->rows != static_cast<int>(m) || weights->cols != 1) {
    throw ShapeError("attention_loss: weights " + weights->shape_str() + " vs " +
                     std::to_string(m) + " labels");
  }
  if (m == 0) throw DegenerateError("attention loss over zero edges");
  std::vector<double> y(m), y_inv(m);
  for (size_t i = 0; i < m; ++i) {
    y[i] = labels[i] ? 1.0 : 0.0;
    y_inv[i] = 1.0 - y[i];
  }
  ad::Value w = ad::clamp(weights, eps, 1.0 - eps);
  ad::Value one_minus_w = ad::clamp(ad::add_scalar(ad::mul_scalar(weights, -1.0), 1.0), eps,
                                    1.0 - eps);
  ad::Value pos = ad::mul(ad::constant(static_cast<int>(m), 1, y), ad::log(w));
  ad::Value neg = ad::mul(ad::constant(static_cast<int>(m), 1, y_inv), ad::log(one_minus_w));
  ad::Value total = ad::add(ad::mul_scalar(ad::sum(pos), pos_weight), ad::sum(neg));
  return ad::mul_scalar(total, -1.0 / static_cast<double>(m));
}

/// L_p = alpha * tr(I - R_gt^T R) + ||t_gt - t||_2 on the differentiable pose.
inline ad::Value pose_loss(const ad::Value& rotation, const ad::Value& translation,
                           const PoseSE3& gt, double alpha) {
  gt.require_valid();
  ad::Value rgt = ad::constant_like(gt.rotation);
  ad::Value rot_trace = ad::sum(ad::mul(rgt, rotation));  // tr(R_gt^T R)
  ad::Value l_r = ad::add_scalar(ad::mul_scalar(rot_trace, -1.0), 3.0);
  ad::Value tgt = ad::constant_like(gt.translation);
  ad::Value diff = ad::sub(tgt, translation);
  ad::Value l_t = ad::sqrt(ad::sum(ad::mul(diff, diff)));
  return ad::add(ad::mul_scalar(l_r, alpha), l_t);
}

inline ad::Value pose_loss(const PosePath& path, const PoseSE3& gt, double alpha) {
  return pose_loss(path.rotation, path.translation, gt, alpha);
}

}  // namespace semreg
