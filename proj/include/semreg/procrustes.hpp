// Weighted closed-form rigid alignment. The cross-covariance of the weighted,
// centred correspondences is decomposed by SVD and the rotation is read off
// with reflection correction; translation aligns the centroids. A parallel
// differentiable route exposes gradients of the pose with respect to the
// match weights for training.
#pragma once

#include <Eigen/Dense>
#include <memory>
#include <span>
#include <sstream>
#include <vector>

#include "semreg/ad/engine.hpp"
#include "semreg/errors.hpp"
#include "semreg/geometry.hpp"

namespace semreg {

struct WeightedMatch {
  Eigen::Vector3d p;  // point in scan k
  Eigen::Vector3d q;  // point in scan l
  double w = 1.0;
};

struct ProcrustesOptions {
  // Weighted centroids keep the solution invariant under uniform weight
  // scaling and let zero weights gate outliers completely; the unweighted
  // variant matches the plain mean formulation.
  bool weighted_centroids = true;
  double degenerate_sv_tol = 1e-8;   // repeated-singular-value guard (gradients)
  double rank_tol = 1e-12;           // relative rank-2 requirement on H
};

inline PoseSE3 weighted_svd(std::span<const WeightedMatch> matches,
                            const ProcrustesOptions& opt = {}) {
  if (matches.size() < 3) {
    throw DegenerateError("need at least 3 matches, got " + std::to_string(matches.size()));
  }
  double wsum = 0.0;
  for (const auto& m : matches) {
    if (!(m.w >= 0.0) || !std::isfinite(m.w)) throw DataError("match weights must be finite and >= 0");
    wsum += m.w;
  }
  if (wsum <= 0.0) throw DegenerateError("all match weights are zero");

  Eigen::Vector3d pbar = Eigen::Vector3d::Zero(), qbar = Eigen::Vector3d::Zero();
  if (opt.weighted_centroids) {
    for (const auto& m : matches) {
      pbar += m.w * m.p;
      qbar += m.w * m.q;
    }
    pbar /= wsum;
    qbar /= wsum;
  } else {
    for (const auto& m : matches) {
      pbar += m.p;
      qbar += m.q;
    }
    pbar /= static_cast<double>(matches.size());
    qbar /= static_cast<double>(matches.size());
  }

  Eigen::Matrix3d h = Eigen::Matrix3d::Zero();
  for (const auto& m : matches) h += m.w * (m.p - pbar) * (m.q - qbar).transpose();

  Eigen::JacobiSVD<Eigen::Matrix3d> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Vector3d s = svd.singularValues();
  if (s[0] <= 0.0 || s[1] <= opt.rank_tol * s[0]) {
    std::ostringstream os;
    os << "degenerate geometry: cross-covariance has rank < 2 (singular values " << s[0] << ", "
       << s[1] << ", " << s[2] << ")";
    throw DegenerateError(os.str());
  }
  const Eigen::Matrix3d u = svd.matrixU();
  const Eigen::Matrix3d v = svd.matrixV();
  Eigen::Vector3d dsign(1.0, 1.0, (v * u.transpose()).determinant() < 0.0 ? -1.0 : 1.0);

  PoseSE3 pose;
  pose.rotation = v * dsign.asDiagonal() * u.transpose();
  pose.translation = qbar - pose.rotation * pbar;
  pose.require_valid(1e-9);
  return pose;
}

/// The same computation expressed in the differentiable engine, with the
/// weights as a graph input. `degenerate` is set at forward time when the
/// cross-covariance has (near-)repeated singular values, in which case the
/// weight gradients are unreliable and the caller should skip them.
struct PosePath {
  ad::Value rotation;     // [3x3]
  ad::Value translation;  // [3x1]
  std::shared_ptr<bool> degenerate;
};

inline PosePath build_pose_path(const std::vector<Eigen::Vector3d>& pk,
                                const std::vector<Eigen::Vector3d>& pl, const ad::Value& weights,
                                const ProcrustesOptions& opt = {}) {
  const int m = static_cast<int>(pk.size());
  if (pk.size() != pl.size() || weights->rows != m || weights->cols != 1) {
    throw ShapeError("pose path: matches and weights disagree");
  }
  Eigen::MatrixXd pmat(m, 3), qmat(m, 3);
  for (int i = 0; i < m; ++i) {
    pmat.row(i) = pk[static_cast<size_t>(i)].transpose();
    qmat.row(i) = pl[static_cast<size_t>(i)].transpose();
  }
  ad::Value p = ad::constant_like(pmat);
  ad::Value q = ad::constant_like(qmat);

  ad::Value pbar_t, qbar_t;  // [1x3] centroids
  if (opt.weighted_centroids) {
    ad::Value wsum = ad::sum(weights);
    pbar_t = ad::transpose(ad::div_by_scalar(ad::matmul(ad::transpose(p), weights), wsum));
    qbar_t = ad::transpose(ad::div_by_scalar(ad::matmul(ad::transpose(q), weights), wsum));
  } else {
    ad::Value ones = ad::constant(m, 1, std::vector<double>(static_cast<size_t>(m), 1.0));
    pbar_t = ad::mul_scalar(ad::transpose(ad::matmul(ad::transpose(p), ones)), 1.0 / m);
    qbar_t = ad::mul_scalar(ad::transpose(ad::matmul(ad::transpose(q), ones)), 1.0 / m);
  }
  ad::Value pc = ad::sub_rowvec(p, pbar_t);
  ad::Value qc = ad::sub_rowvec(q, qbar_t);
  ad::Value h = ad::matmul(ad::transpose(ad::scale_rows(pc, weights)), qc);

  PosePath path;
  path.degenerate = std::make_shared<bool>(false);
  path.rotation = ad::svd_rotation(h, opt.degenerate_sv_tol, path.degenerate);
  path.translation =
      ad::sub(ad::transpose(qbar_t), ad::matmul(path.rotation, ad::transpose(pbar_t)));
  return path;
}

/// dL/dw for every match weight, given upstream gradients of the loss with
/// respect to (R, t). Throws when the SVD adjoint is unreliable.
inline std::vector<double> pose_gradients(const std::vector<WeightedMatch>& matches,
                                          const Eigen::Matrix3d& rotation_grad,
                                          const Eigen::Vector3d& translation_grad,
                                          const ProcrustesOptions& opt = {}) {
  std::vector<Eigen::Vector3d> pk, pl;
  ad::Value w = ad::leaf(static_cast<int>(matches.size()), 1);
  for (size_t i = 0; i < matches.size(); ++i) {
    pk.push_back(matches[i].p);
    pl.push_back(matches[i].q);
    w->val[i] = matches[i].w;
  }
  PosePath path = build_pose_path(pk, pl, w, opt);
  if (*path.degenerate) {
    throw DegenerateError("repeated singular values: pose gradient is unreliable");
  }
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) path.rotation->grad_at(r, c) = rotation_grad(r, c);
    path.translation->grad[static_cast<size_t>(r)] = translation_grad(r);
  }
  ad::run_backward({path.rotation, path.translation});
  return w->grad;
}

}  // namespace semreg
