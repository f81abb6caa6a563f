#include <gtest/gtest.h>

#include <random>

#include "semreg/losses.hpp"
#include "semreg/procrustes.hpp"
#include "semreg/metrics.hpp"
#include "test_util.hpp"

using namespace semreg;

namespace {

std::vector<WeightedMatch> exact_matches(const std::vector<Eigen::Vector3d>& cloud,
                                         const PoseSE3& pose, double weight = 1.0) {
  std::vector<WeightedMatch> out;
  for (const auto& p : cloud) out.push_back({p, pose.apply(p), weight});
  return out;
}

std::vector<Eigen::Vector3d> random_cloud(std::mt19937_64& rng, int n, double extent = 10.0) {
  std::uniform_real_distribution<double> coord(-extent, extent);
  std::vector<Eigen::Vector3d> out;
  for (int i = 0; i < n; ++i) out.emplace_back(coord(rng), coord(rng), coord(rng));
  return out;
}

}  // namespace

TEST(WeightedSvd, SelfAlignmentIsIdentity) {
  std::mt19937_64 rng(1);
  const auto cloud = random_cloud(rng, 20);
  std::uniform_real_distribution<double> wdist(0.1, 2.0);
  std::vector<WeightedMatch> matches;
  for (const auto& p : cloud) matches.push_back({p, p, wdist(rng)});
  const PoseSE3 pose = weighted_svd(matches);
  EXPECT_LT((pose.rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT(pose.translation.norm(), 1e-12);
}

TEST(WeightedSvd, RecoversKnownTransform) {
  std::mt19937_64 rng(2);
  const auto cloud = random_cloud(rng, 30);
  PoseSE3 gt;
  gt.rotation = rotation_z(30.0 * kDegToRad);
  gt.translation = {1.0, 2.0, 0.0};
  const PoseSE3 est = weighted_svd(exact_matches(cloud, gt));
  EXPECT_LT((est.rotation - gt.rotation).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LT((est.translation - gt.translation).norm(), 1e-9);
}

TEST(WeightedSvd, ZeroWeightedOutliersDoNotPerturb) {
  std::mt19937_64 rng(3);
  const auto cloud = random_cloud(rng, 40);
  const PoseSE3 gt = test::random_pose(rng, 2.0, 5.0);
  std::vector<WeightedMatch> matches = exact_matches(cloud, gt);
  std::uniform_real_distribution<double> junk(-50.0, 50.0);
  for (size_t i = 0; i < matches.size(); i += 3) {  // ~30% outliers, weight 0
    matches[i].q = {junk(rng), junk(rng), junk(rng)};
    matches[i].w = 0.0;
  }
  const PoseSE3 est = weighted_svd(matches);
  EXPECT_LT((est.rotation - gt.rotation).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LT((est.translation - gt.translation).norm(), 1e-9);
}

TEST(WeightedSvd, UniformWeightScalingIsInvariant) {
  std::mt19937_64 rng(4);
  const auto cloud = random_cloud(rng, 15);
  const PoseSE3 gt = test::random_pose(rng, 2.0, 5.0);
  std::vector<WeightedMatch> matches = exact_matches(cloud, gt);
  std::uniform_real_distribution<double> wdist(0.1, 1.0);
  for (auto& m : matches) m.w = wdist(rng);
  const PoseSE3 a = weighted_svd(matches);
  for (auto& m : matches) m.w *= 37.5;
  const PoseSE3 b = weighted_svd(matches);
  EXPECT_LT((a.rotation - b.rotation).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((a.translation - b.translation).norm(), 1e-12);
}

TEST(WeightedSvd, EquivariantUnderPreRotation) {
  std::mt19937_64 rng(5);
  const auto cloud = random_cloud(rng, 25);
  const PoseSE3 gt = test::random_pose(rng, 2.0, 3.0);
  std::vector<WeightedMatch> matches = exact_matches(cloud, gt);
  const PoseSE3 base = weighted_svd(matches);

  const Eigen::Matrix3d q = test::random_pose(rng, 3.0, 0.0).rotation;
  std::vector<WeightedMatch> rotated;
  for (const auto& m : matches) rotated.push_back({q * m.p, q * m.q, m.w});
  const PoseSE3 conj = weighted_svd(rotated);
  EXPECT_LT((conj.rotation - q * base.rotation * q.transpose()).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LT((conj.translation - q * base.translation).norm(), 1e-9);
}

TEST(WeightedSvd, ReflectionCorrectionKeepsDetPositive) {
  // a mirror-degenerate configuration: q = -p (point reflection)
  std::mt19937_64 rng(6);
  const auto cloud = random_cloud(rng, 20);
  std::vector<WeightedMatch> matches;
  for (const auto& p : cloud) matches.push_back({p, -p, 1.0});
  const PoseSE3 pose = weighted_svd(matches);
  EXPECT_NEAR(pose.rotation.determinant(), 1.0, 1e-9);
}

TEST(WeightedSvd, LargeRotationsRecoverPrecisely) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const auto cloud = random_cloud(rng, 12);
    const PoseSE3 gt = test::random_pose(rng, 170.0 * kDegToRad, 10.0);
    const PoseSE3 est = weighted_svd(exact_matches(cloud, gt));
    EXPECT_LT(rre_degrees_stable(est, gt), 1e-7);
    EXPECT_LT((est.translation - gt.translation).norm(), 1e-9);
  }
}

TEST(WeightedSvd, AllZeroWeightsIsDegenerate) {
  std::mt19937_64 rng(8);
  const auto cloud = random_cloud(rng, 5);
  std::vector<WeightedMatch> matches = exact_matches(cloud, PoseSE3::identity(), 0.0);
  EXPECT_THROW(weighted_svd(matches), DegenerateError);
}

TEST(WeightedSvd, CollinearGeometryIsDegenerateWithConditionReport) {
  std::vector<WeightedMatch> matches;
  for (int i = 0; i < 8; ++i) {
    const Eigen::Vector3d p(static_cast<double>(i), 0.0, 0.0);
    matches.push_back({p, p + Eigen::Vector3d(0.5, 0, 0), 1.0});
  }
  try {
    weighted_svd(matches);
    FAIL();
  } catch (const DegenerateError& e) {
    EXPECT_NE(std::string(e.what()).find("singular values"), std::string::npos);
  }
}

TEST(WeightedSvd, TooFewMatchesIsDegenerate) {
  std::vector<WeightedMatch> matches = {{{1, 0, 0}, {1, 0, 0}, 1.0}, {{0, 1, 0}, {0, 1, 0}, 1.0}};
  EXPECT_THROW(weighted_svd(matches), DegenerateError);
}

TEST(WeightedSvd, NegativeWeightIsDataError) {
  std::mt19937_64 rng(9);
  auto matches = exact_matches(random_cloud(rng, 5), PoseSE3::identity());
  matches[0].w = -0.5;
  EXPECT_THROW(weighted_svd(matches), DataError);
}

TEST(ApplyTransform, IdentityAndInverseRoundTrip) {
  std::mt19937_64 rng(10);
  LidarScan scan = test::random_ring_scan(rng, 3, 30);
  const LidarScan same = apply_transform(scan, PoseSE3::identity());
  for (size_t i = 0; i < scan.size(); ++i) EXPECT_EQ(same.points[i], scan.points[i]);

  const PoseSE3 pose = test::random_pose(rng, 3.0, 5.0);
  const LidarScan back = apply_transform(apply_transform(scan, pose), pose.inverse());
  for (size_t i = 0; i < scan.size(); ++i) {
    EXPECT_LT((back.points[i] - scan.points[i]).norm(), 1e-12);
  }
}

TEST(ApplyTransform, CompositionEqualsSequentialApplication) {
  std::mt19937_64 rng(11);
  const LidarScan scan = test::random_ring_scan(rng, 3, 30);
  const PoseSE3 a = test::random_pose(rng, 2.0, 4.0);
  const PoseSE3 b = test::random_pose(rng, 2.0, 4.0);
  const LidarScan sequential = apply_transform(apply_transform(scan, a), b);
  const LidarScan composed = apply_transform(scan, b.compose(a));
  for (size_t i = 0; i < scan.size(); ++i) {
    EXPECT_LT((sequential.points[i] - composed.points[i]).norm(), 1e-12);
  }
}

// --- differentiable route ----------------------------------------------------

TEST(PoseGradients, MatchesFiniteDifferencesOnRandomMatches) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 5; ++trial) {
    const auto cloud = random_cloud(rng, 10, 5.0);
    const PoseSE3 gt = test::random_pose(rng, 0.2, 1.0);
    std::vector<WeightedMatch> matches;
    std::uniform_real_distribution<double> wdist(0.2, 1.0);
    std::normal_distribution<double> noise(0.0, 0.05);
    for (const auto& p : cloud) {
      Eigen::Vector3d q = gt.apply(p) + Eigen::Vector3d(noise(rng), noise(rng), noise(rng));
      matches.push_back({p, q, wdist(rng)});
    }

    std::vector<Eigen::Vector3d> pk, pl;
    ad::Value w = ad::leaf(static_cast<int>(matches.size()), 1);
    for (size_t i = 0; i < matches.size(); ++i) {
      pk.push_back(matches[i].p);
      pl.push_back(matches[i].q);
      w->val[i] = matches[i].w;
    }
    auto loss_value = [&]() {
      const PosePath path = build_pose_path(pk, pl, w);
      return pose_loss(path, gt, 1e3)->val[0];
    };
    {
      const PosePath path = build_pose_path(pk, pl, w);
      ASSERT_FALSE(*path.degenerate);
      ad::backward(pose_loss(path, gt, 1e3));
    }
    // the rotation loss cancels alpha * tr(I) internally, which sets the FD
    // noise floor
    const double atol = test::fd_atol(3.0 * 1e3);
    const test::FdReport report = test::finite_difference_check(w, loss_value, 1e-5, atol);
    EXPECT_EQ(report.checked + report.within_atol, w->size());
    EXPECT_LT(report.max_rel_error, 1e-4) << "trial " << trial;
    // the check is not vacuous: gradients sit far above the noise floor, so a
    // wrong adjoint would surface as a large relative error
    double max_abs = 0.0;
    for (double g : w->grad) max_abs = std::max(max_abs, std::abs(g));
    EXPECT_GT(max_abs, 100.0 * atol);
  }
}

TEST(PoseGradients, UniformScaleDirectionIsFlat) {
  // R and t are invariant under w -> c*w, so the directional derivative of any
  // pose loss along the all-ones direction is zero
  std::mt19937_64 rng(13);
  const auto cloud = random_cloud(rng, 8, 5.0);
  const PoseSE3 gt = test::random_pose(rng, 0.3, 1.0);
  std::vector<WeightedMatch> matches;
  std::uniform_real_distribution<double> wdist(0.3, 1.0);
  std::normal_distribution<double> noise(0.0, 0.05);
  for (const auto& p : cloud) {
    matches.push_back(
        {p, gt.apply(p) + Eigen::Vector3d(noise(rng), noise(rng), noise(rng)), wdist(rng)});
  }
  ad::Value w = ad::leaf(static_cast<int>(matches.size()), 1);
  std::vector<Eigen::Vector3d> pk, pl;
  for (size_t i = 0; i < matches.size(); ++i) {
    pk.push_back(matches[i].p);
    pl.push_back(matches[i].q);
    w->val[i] = matches[i].w;
  }
  const PosePath path = build_pose_path(pk, pl, w);
  ad::backward(pose_loss(path, gt, 1e3));
  double directional = 0.0;
  for (size_t i = 0; i < matches.size(); ++i) directional += w->grad[i] * w->val[i];
  EXPECT_NEAR(directional, 0.0, 1e-8);
}

TEST(PoseGradients, ApiReturnsPerWeightGradients) {
  std::mt19937_64 rng(14);
  const auto cloud = random_cloud(rng, 6, 4.0);
  const PoseSE3 gt = test::random_pose(rng, 0.3, 1.0);
  std::vector<WeightedMatch> matches;
  std::normal_distribution<double> noise(0.0, 0.1);
  for (const auto& p : cloud) {
    matches.push_back({p, gt.apply(p) + Eigen::Vector3d(noise(rng), noise(rng), noise(rng)), 0.7});
  }
  Eigen::Matrix3d rbar;
  rbar.setConstant(0.1);
  const Eigen::Vector3d tbar(0.2, -0.3, 0.4);
  const std::vector<double> grads = pose_gradients(matches, rbar, tbar);
  ASSERT_EQ(grads.size(), matches.size());
  for (double g : grads) EXPECT_TRUE(std::isfinite(g));
}

TEST(PoseGradients, RepeatedSingularValuesThrow) {
  // symmetric cloud aligned with itself: H has equal singular values
  std::vector<WeightedMatch> matches = {
      {{1, 0, 0}, {1, 0, 0}, 1.0},  {{-1, 0, 0}, {-1, 0, 0}, 1.0}, {{0, 1, 0}, {0, 1, 0}, 1.0},
      {{0, -1, 0}, {0, -1, 0}, 1.0}, {{0, 0, 1}, {0, 0, 1}, 1.0},  {{0, 0, -1}, {0, 0, -1}, 1.0}};
  EXPECT_THROW(
      pose_gradients(matches, Eigen::Matrix3d::Identity(), Eigen::Vector3d::Zero()),
      DegenerateError);
}

TEST(UnweightedCentroidMode, MatchesPlainKabschOnUniformWeights) {
  std::mt19937_64 rng(15);
  const auto cloud = random_cloud(rng, 12);
  const PoseSE3 gt = test::random_pose(rng, 1.0, 2.0);
  ProcrustesOptions opt;
  opt.weighted_centroids = false;
  const PoseSE3 est = weighted_svd(exact_matches(cloud, gt), opt);
  EXPECT_LT((est.rotation - gt.rotation).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LT((est.translation - gt.translation).norm(), 1e-9);
}
