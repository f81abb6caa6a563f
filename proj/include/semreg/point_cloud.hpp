// Scan containers: raw lidar points plus per-point semantic annotation.
#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <vector>

#include "semreg/errors.hpp"
#include "semreg/geometry.hpp"

namespace semreg {

/// One lidar sweep in the sensor frame. Point order is the ring order
/// (azimuth-ordered per elevation ring for synthetic scans, file order for
/// ingested ones); curvature windows rely on it.
struct LidarScan {
  std::vector<Eigen::Vector3d> points;
  std::vector<float> remission;  // empty, or one value per point
  int scan_index = 0;

  size_t size() const { return points.size(); }

  void require_valid() const {
    if (!remission.empty() && remission.size() != points.size()) {
      throw DataError("remission length does not match point count");
    }
    for (size_t i = 0; i < points.size(); ++i) {
      if (!points[i].allFinite()) {
        throw DataError("non-finite coordinate at point " + std::to_string(i));
      }
    }
  }
};

struct SemanticScan {
  LidarScan scan;
  std::vector<uint16_t> labels;
  std::vector<uint16_t> raw_instance;

  size_t size() const { return scan.size(); }

  void require_valid() const {
    scan.require_valid();
    if (labels.size() != scan.size()) {
      throw DataError("label count does not match point count");
    }
    if (!raw_instance.empty() && raw_instance.size() != scan.size()) {
      throw DataError("instance count does not match point count");
    }
  }
};

inline LidarScan apply_transform(const LidarScan& scan, const PoseSE3& pose) {
  LidarScan out = scan;
  for (auto& p : out.points) p = pose.apply(p);
  return out;
}

inline SemanticScan apply_transform(const SemanticScan& scan, const PoseSE3& pose) {
  SemanticScan out = scan;
  out.scan = apply_transform(scan.scan, pose);
  return out;
}

}  // namespace semreg
