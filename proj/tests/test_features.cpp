#include <gtest/gtest.h>

#include <random>

#include "semreg/curvature.hpp"
#include "semreg/synthetic.hpp"
#include "test_util.hpp"

using namespace semreg;

namespace {

// literal transcription of the curvature definition, evaluated from scratch
// per point
double curvature_reference(const LidarScan& scan, int i, int window) {
  const int n = static_cast<int>(scan.size());
  Eigen::Vector3d sum = Eigen::Vector3d::Zero();
  int count = 0;
  for (int j = std::max(0, i - window); j <= std::min(n - 1, i + window); ++j) {
    if (j == i) continue;
    sum += scan.points[static_cast<size_t>(i)] - scan.points[static_cast<size_t>(j)];
    ++count;
  }
  const double norm_p = scan.points[static_cast<size_t>(i)].norm();
  if (count == 0 || norm_p == 0.0) return 0.0;
  return sum.norm() / (count * norm_p);
}

}  // namespace

TEST(Curvature, CollinearMidpointIsZero) {
  LidarScan scan;
  for (int i = 0; i < 5; ++i) scan.points.emplace_back(1.0 + i, 2.0, 0.0);
  const CurvatureResult r = compute_curvature(scan, 2);
  EXPECT_NEAR(r.curvature[2], 0.0, 1e-15);
}

TEST(Curvature, HandEvaluatedCorner) {
  // window 1 around the middle point: sum = (2,0,0)-(1,0,0) + (2,0,0)-(2,1,0)
  // = (1,-1,0); c = sqrt(2) / (2 * ||(2,0,0)||) = sqrt(2)/4
  LidarScan scan;
  scan.points = {{1, 0, 0}, {2, 0, 0}, {2, 1, 0}};
  const CurvatureResult r = compute_curvature(scan, 1);
  EXPECT_NEAR(r.curvature[1], std::sqrt(2.0) / 4.0, 1e-12);
  EXPECT_NEAR(r.curvature[1], 0.35355, 5e-6);
}

TEST(Curvature, MatchesBruteForceReference) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const LidarScan scan = test::random_ring_scan(rng, 6, 60);
    const CurvatureResult r = compute_curvature(scan, 5);
    for (size_t i = 0; i < scan.size(); ++i) {
      ASSERT_NEAR(r.curvature[i], curvature_reference(scan, static_cast<int>(i), 5), 1e-12);
    }
  }
}

TEST(Curvature, InvariantUnderGlobalRotation) {
  std::mt19937_64 rng(6);
  const LidarScan scan = test::random_ring_scan(rng, 4, 50);
  const CurvatureResult base = compute_curvature(scan, 5);
  const PoseSE3 rot{test::random_pose(rng, M_PI, 0.0).rotation, Eigen::Vector3d::Zero()};
  const CurvatureResult rotated = compute_curvature(apply_transform(scan, rot), 5);
  for (size_t i = 0; i < scan.size(); ++i) {
    const double scale = std::max(1.0, std::abs(base.curvature[i]));
    EXPECT_NEAR(rotated.curvature[i], base.curvature[i], 1e-9 * scale);
  }
}

TEST(Curvature, InvariantUnderUniformScaling) {
  std::mt19937_64 rng(7);
  LidarScan scan = test::random_ring_scan(rng, 4, 50);
  const CurvatureResult base = compute_curvature(scan, 5);
  LidarScan scaled = scan;
  for (auto& p : scaled.points) p *= 3.7;
  const CurvatureResult r = compute_curvature(scaled, 5);
  for (size_t i = 0; i < scan.size(); ++i) {
    EXPECT_NEAR(r.curvature[i], base.curvature[i], 1e-9 * std::max(1.0, base.curvature[i]));
  }
}

TEST(Curvature, OriginPointIsFlaggedZero) {
  LidarScan scan;
  scan.points = {{1, 0, 0}, {0, 0, 0}, {2, 0, 0}};
  const CurvatureResult r = compute_curvature(scan, 1);
  EXPECT_EQ(r.zero_norm[1], 1);
  EXPECT_EQ(r.curvature[1], 0.0);
}

TEST(ClassifyGeometry, FlatIsSurfaceForAnyThreshold) {
  const std::vector<double> c = {0.0};
  for (double thr : {1e-9, 0.1, 10.0}) {
    EXPECT_EQ(classify_geometry(c, thr)[0], GeometricClass::surface);
  }
}

TEST(ClassifyGeometry, BoundaryGoesToCorner) {
  const std::vector<double> c = {0.25};
  EXPECT_EQ(classify_geometry(c, 0.25)[0], GeometricClass::corner);
  EXPECT_EQ(classify_geometry(c, 0.250001)[0], GeometricClass::surface);
}

// geometric oracle: a ring tracing a rectangle separates bend points from
// straight-segment points at the default threshold
TEST(ClassifyGeometry, RectanglePathSeparatesCornersFromFaces) {
  // spacing consistent with spinning-lidar angular resolution at this range
  // (a bend's curvature response scales with spacing/range)
  LidarScan scan;
  const double half = 4.0;
  const double step = 0.35;
  std::vector<bool> is_vertex;
  auto emit_edge = [&](Eigen::Vector3d from, Eigen::Vector3d to) {
    const int steps = static_cast<int>(std::round((to - from).norm() / step));
    for (int i = 0; i < steps; ++i) {
      const double t = static_cast<double>(i) / steps;
      scan.points.push_back(from + t * (to - from));
      is_vertex.push_back(i == 0);
    }
  };
  emit_edge({half, -half, 0}, {half, half, 0});
  emit_edge({half, half, 0}, {-half, half, 0});
  emit_edge({-half, half, 0}, {-half, -half, 0});
  emit_edge({-half, -half, 0}, {half, -half, 0});

  const CurvatureResult r = compute_features(scan, 5, 0.1);
  for (size_t i = 0; i < scan.size(); ++i) {
    if (is_vertex[i]) {
      EXPECT_EQ(r.classes[i], GeometricClass::corner) << "vertex point " << i;
    }
  }
  // mid-segment points (away from any bend and from the array boundary,
  // where the truncated window raises curvature by design) must be surfaces
  for (size_t i = 5; i + 5 < scan.size(); ++i) {
    bool near_vertex = false;
    for (size_t j = 0; j < scan.size(); ++j) {
      if (is_vertex[j] && std::abs(static_cast<long>(i) - static_cast<long>(j)) <= 5) {
        near_vertex = true;
      }
    }
    if (!near_vertex) {
      EXPECT_EQ(r.classes[i], GeometricClass::surface) << "segment point " << i;
    }
  }
}

TEST(Curvature, WindowMustBePositive) {
  LidarScan scan;
  scan.points = {{1, 0, 0}};
  EXPECT_THROW(compute_curvature(scan, 0), ConfigError);
  EXPECT_THROW(classify_geometry({0.1}, 0.0), ConfigError);
}
