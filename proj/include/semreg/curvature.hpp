// Local-roughness score over consecutive ring neighbours and the
// corner/surface split derived from it.
#pragma once

#include <cstdint>
#include <vector>

#include "semreg/errors.hpp"
#include "semreg/point_cloud.hpp"

namespace semreg {

enum class GeometricClass : uint8_t { corner, surface };

inline const char* to_string(GeometricClass g) {
  return g == GeometricClass::corner ? "corner" : "surface";
}

struct CurvatureResult {
  std::vector<double> curvature;          // c_i >= 0, unitless
  std::vector<GeometricClass> classes;    // filled by classify_geometry
  std::vector<uint8_t> zero_norm;         // points with ||p|| = 0 (c forced to 0)
};

/// c_i = ||sum_{i' in S, i' != i} (p_i - p_i')|| / (|S| * ||p_i||), where S is
/// the window of `window` consecutive points on each side of i; truncated at
/// the scan boundaries with |S| adjusted. Points at the sensor origin get
/// c = 0 and a zero_norm flag.
inline CurvatureResult compute_curvature(const LidarScan& scan, int window) {
  if (window < 1) throw ConfigError("curvature window must be >= 1");
  const int n = static_cast<int>(scan.size());
  CurvatureResult out;
  out.curvature.assign(static_cast<size_t>(n), 0.0);
  out.classes.assign(static_cast<size_t>(n), GeometricClass::surface);
  out.zero_norm.assign(static_cast<size_t>(n), 0);
  for (int i = 0; i < n; ++i) {
    const int lo = std::max(0, i - window);
    const int hi = std::min(n - 1, i + window);
    const int count = hi - lo;  // neighbours excluding i itself
    if (count == 0) continue;
    Eigen::Vector3d sum = Eigen::Vector3d::Zero();
    for (int j = lo; j <= hi; ++j) {
      if (j == i) continue;
      sum += scan.points[static_cast<size_t>(i)] - scan.points[static_cast<size_t>(j)];
    }
    const double norm_p = scan.points[static_cast<size_t>(i)].norm();
    if (norm_p == 0.0) {
      out.zero_norm[static_cast<size_t>(i)] = 1;
      continue;
    }
    out.curvature[static_cast<size_t>(i)] = sum.norm() / (count * norm_p);
  }
  return out;
}

/// c >= threshold -> corner (boundary assigned to corner), c < threshold ->
/// surface.
inline std::vector<GeometricClass> classify_geometry(const std::vector<double>& curvature,
                                                     double threshold) {
  if (threshold <= 0.0) throw ConfigError("curvature threshold must be positive");
  std::vector<GeometricClass> out(curvature.size());
  for (size_t i = 0; i < curvature.size(); ++i) {
    out[i] = curvature[i] >= threshold ? GeometricClass::corner : GeometricClass::surface;
  }
  return out;
}

inline CurvatureResult compute_features(const LidarScan& scan, int window, double threshold) {
  CurvatureResult r = compute_curvature(scan, window);
  r.classes = classify_geometry(r.curvature, threshold);
  return r;
}

}  // namespace semreg
