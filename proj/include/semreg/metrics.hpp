// Registration error metrics and recall.
#pragma once

#include <cmath>
#include <optional>
#include <span>

#include "semreg/errors.hpp"
#include "semreg/geometry.hpp"

namespace semreg {

/// Relative rotation error in degrees: acos((tr(R_gt^T R) - 1) / 2), with the
/// acos argument clamped against round-off.
inline double rre_degrees(const PoseSE3& pred, const PoseSE3& gt) {
  const double t = (gt.rotation.transpose() * pred.rotation).trace();
  const double arg = std::clamp(0.5 * (t - 1.0), -1.0, 1.0);
  return std::acos(arg) * kRadToDeg;
}

/// Relative translation error in meters.
inline double rte_meters(const PoseSE3& pred, const PoseSE3& gt) {
  return (gt.translation - pred.translation).norm();
}

/// The same rotation angle evaluated through ||R_gt^T R - I||_F =
/// 2*sqrt(2)*|sin(angle/2)|. Algebraically equal to the acos form, but the
/// acos route floors at acos(1 - ulp) ~ 1.2e-6 degrees, so sub-microdegree
/// errors are only resolvable this way.
inline double rre_degrees_stable(const PoseSE3& pred, const PoseSE3& gt) {
  const Eigen::Matrix3d delta =
      gt.rotation.transpose() * pred.rotation - Eigen::Matrix3d::Identity();
  const double s = std::clamp(delta.norm() / (2.0 * std::sqrt(2.0)), 0.0, 1.0);
  return 2.0 * std::asin(s) * kRadToDeg;
}

struct RegistrationMetrics {
  double rre_deg = 0.0;
  double rte_m = 0.0;
  bool success = false;
};

struct EvalThresholds {
  double rte_m = 0.6;
  double rre_deg = 5.0;
};

inline RegistrationMetrics evaluate_pair(const PoseSE3& pred, const PoseSE3& gt,
                                         const EvalThresholds& thresholds = {}) {
  RegistrationMetrics m;
  m.rre_deg = rre_degrees(pred, gt);
  m.rte_m = rte_meters(pred, gt);
  m.success = m.rte_m < thresholds.rte_m && m.rre_deg < thresholds.rre_deg;
  return m;
}

struct RecallSummary {
  double rr_percent = 0.0;
  std::optional<double> mean_rte_m;  // over successes only
  std::optional<double> mean_rre_deg;
  size_t successes = 0;
  size_t total = 0;
};

inline RecallSummary registration_recall(std::span<const RegistrationMetrics> results) {
  if (results.empty()) throw UsageError("registration recall over an empty result set");
  RecallSummary s;
  s.total = results.size();
  double rte_sum = 0.0, rre_sum = 0.0;
  for (const auto& r : results) {
    if (!r.success) continue;
    ++s.successes;
    rte_sum += r.rte_m;
    rre_sum += r.rre_deg;
  }
  s.rr_percent = 100.0 * static_cast<double>(s.successes) / static_cast<double>(s.total);
  if (s.successes > 0) {
    s.mean_rte_m = rte_sum / static_cast<double>(s.successes);
    s.mean_rre_deg = rre_sum / static_cast<double>(s.successes);
  }
  return s;
}

}  // namespace semreg
