// Shared helpers for the test suites: random generators, temp directories and
// the finite-difference harness.
#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "semreg/ad/engine.hpp"
#include "semreg/geometry.hpp"
#include "semreg/pipeline.hpp"
#include "semreg/point_cloud.hpp"
#include "semreg/synthetic.hpp"

namespace semreg::test {

/// Desk-scale pipeline settings matched to the small synthetic scenes.
inline PipelineConfig small_pipeline() {
  PipelineConfig cfg;
  cfg.clusters.fallback = {5, 1.0};
  cfg.clusters.per_label = {{10, {6, 0.6}}, {50, {8, 2.0}}, {51, {6, 1.2}},
                            {48, {6, 2.0}}, {80, {3, 0.6}}, {71, {4, 0.6}}};
  return cfg;
}

inline SceneConfig small_scene_config(uint64_t seed) {
  SceneConfig scene;
  scene.seed = seed;
  scene.plane_count = 4;
  scene.cylinder_count = 3;
  scene.box_count = 2;
  scene.rings = 6;
  scene.azimuth_steps = 56;
  scene.world_radius = 8.0;
  return scene;
}

struct SmallPair {
  CrossGraph graph;
  PoseSE3 gt;
};

/// A pruned cross-graph from a small synthetic scene pair.
inline SmallPair small_cross_graph(uint64_t seed, double cross_thresh = 2.0) {
  const SyntheticPair sp = generate_synthetic_pair(small_scene_config(seed));
  SmallPair out;
  out.graph = build_pair_graph(sp.scan_k, sp.scan_l, small_pipeline(), cross_thresh);
  out.gt = sp.gt;
  return out;
}

inline std::filesystem::path temp_dir(const std::string& tag) {
  static std::mt19937_64 rng(std::random_device{}());
  const auto path = std::filesystem::temp_directory_path() /
                    ("semreg_test_" + tag + "_" + std::to_string(rng()));
  std::filesystem::create_directories(path);
  return path;
}

inline Eigen::Vector3d random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::Vector3d v(gauss(rng), gauss(rng), gauss(rng));
  while (v.norm() < 1e-9) v = {gauss(rng), gauss(rng), gauss(rng)};
  return v.normalized();
}

inline PoseSE3 random_pose(std::mt19937_64& rng, double max_angle_rad, double max_translation) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  PoseSE3 pose;
  pose.rotation = rotation_about_axis(random_unit(rng), unit(rng) * max_angle_rad);
  pose.translation = random_unit(rng) * (unit(rng) * max_translation);
  return pose;
}

/// A ring-ordered random scan: points sampled per elevation ring in azimuth
/// order at jittered ranges, mimicking a spinning lidar.
inline LidarScan random_ring_scan(std::mt19937_64& rng, int rings, int per_ring,
                                  double base_range = 8.0) {
  std::uniform_real_distribution<double> jitter(-0.5, 0.5);
  LidarScan scan;
  for (int r = 0; r < rings; ++r) {
    const double elev = (-15.0 + 2.0 * r) * kDegToRad;
    for (int a = 0; a < per_ring; ++a) {
      const double az = 2.0 * M_PI * a / per_ring;
      const double range = base_range + jitter(rng);
      scan.points.emplace_back(range * std::cos(elev) * std::cos(az),
                               range * std::cos(elev) * std::sin(az), range * std::sin(elev));
    }
  }
  return scan;
}

struct FdReport {
  double max_rel_error = 0.0;
  size_t checked = 0;
  size_t within_atol = 0;  // differences below the FD-noise floor
};

/// Central finite differences on every element of `leaf` against the analytic
/// gradient left in leaf->grad by the caller. `eval` must rebuild the whole
/// forward pass and return the scalar loss. Differences below `atol` count as
/// agreement: central differences of a loss of magnitude L carry roundoff of
/// order eps * L / step, which dominates elements whose true gradient sits
/// near zero. The default atol suits O(1) losses at the default step.
inline FdReport finite_difference_check(const ad::Value& leaf,
                                        const std::function<double()>& eval, double step = 1e-5,
                                        double atol = 1e-9) {
  FdReport report;
  for (size_t i = 0; i < leaf->size(); ++i) {
    const double saved = leaf->val[i];
    leaf->val[i] = saved + step;
    const double up = eval();
    leaf->val[i] = saved - step;
    const double down = eval();
    leaf->val[i] = saved;
    const double numeric = (up - down) / (2.0 * step);
    const double analytic = leaf->grad[i];
    const double diff = std::abs(numeric - analytic);
    if (diff <= atol) {
      ++report.within_atol;
      continue;
    }
    const double rel = diff / std::max(std::abs(numeric), std::abs(analytic));
    report.max_rel_error = std::max(report.max_rel_error, rel);
    ++report.checked;
  }
  return report;
}

/// atol matched to the FD roundoff floor. `loss_scale` must be the magnitude
/// of the largest term the loss cancels internally (e.g. alpha * tr(I) for a
/// scaled rotation loss), not just the final loss value.
inline double fd_atol(double loss_scale, double step = 1e-5) {
  return 100.0 * 2.2e-16 * std::max(1.0, std::abs(loss_scale)) / step;
}

}  // namespace semreg::test
