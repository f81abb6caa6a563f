// Rigid-body poses and small rotation utilities.
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <sstream>

#include "semreg/errors.hpp"

namespace semreg {

constexpr double kDegToRad = M_PI / 180.0;
constexpr double kRadToDeg = 180.0 / M_PI;

/// Projects an arbitrary 3x3 matrix onto the nearest rotation (Frobenius
/// sense) with det +1.
inline Eigen::Matrix3d nearest_rotation(const Eigen::Matrix3d& m) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d u = svd.matrixU();
  Eigen::Matrix3d v = svd.matrixV();
  Eigen::Matrix3d r = u * v.transpose();
  if (r.determinant() < 0.0) {
    u.col(2) *= -1.0;
    r = u * v.transpose();
  }
  return r;
}

/// Rigid transform: p -> rotation * p + translation.
struct PoseSE3 {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  static PoseSE3 identity() { return {}; }

  Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return rotation * p + translation; }

  PoseSE3 inverse() const {
    PoseSE3 out;
    out.rotation = rotation.transpose();
    out.translation = -(out.rotation * translation);
    return out;
  }

  /// Composition: (*this) after `other`, i.e. apply(other.apply(p)).
  PoseSE3 compose(const PoseSE3& other) const {
    PoseSE3 out;
    out.rotation = rotation * other.rotation;
    out.translation = rotation * other.translation + translation;
    return out;
  }

  double orthogonality_residual() const {
    return (rotation.transpose() * rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  }

  bool is_valid(double tol = 1e-9) const {
    return orthogonality_residual() <= tol && std::abs(rotation.determinant() - 1.0) <= tol &&
           rotation.allFinite() && translation.allFinite();
  }

  void require_valid(double tol = 1e-9) const {
    if (!is_valid(tol)) {
      std::ostringstream os;
      os << "pose violates SO(3) invariants (orthogonality residual "
         << orthogonality_residual() << ", det " << rotation.determinant() << ")";
      throw DataError(os.str());
    }
  }
};

/// Transform mapping points of scan k into scan l's frame given the two
/// world-frame sensor poses: T = pose_l^-1 * pose_k.
inline PoseSE3 relative_pose(const PoseSE3& pose_k, const PoseSE3& pose_l) {
  return pose_l.inverse().compose(pose_k);
}

inline Eigen::Matrix3d rotation_about_axis(const Eigen::Vector3d& axis, double angle_rad) {
  return Eigen::AngleAxisd(angle_rad, axis.normalized()).toRotationMatrix();
}

inline Eigen::Matrix3d rotation_z(double angle_rad) {
  return rotation_about_axis(Eigen::Vector3d::UnitZ(), angle_rad);
}

/// Z-Y-X (yaw-pitch-roll) Euler angles in radians; R = Rz(yaw)Ry(pitch)Rx(roll).
inline Eigen::Vector3d euler_zyx(const Eigen::Matrix3d& r) {
  const double pitch = std::asin(std::clamp(-r(2, 0), -1.0, 1.0));
  const double roll = std::atan2(r(2, 1), r(2, 2));
  const double yaw = std::atan2(r(1, 0), r(0, 0));
  return {roll, pitch, yaw};
}

inline Eigen::Matrix3d from_euler_zyx(double roll, double pitch, double yaw) {
  return (Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitZ()) *
          Eigen::AngleAxisd(pitch, Eigen::Vector3d::UnitY()) *
          Eigen::AngleAxisd(roll, Eigen::Vector3d::UnitX()))
      .toRotationMatrix();
}

}  // namespace semreg
