#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "sandsim/kinematics.hpp"
#include "support.hpp"

using namespace sandsim;

namespace {

// Craig-convention link transform written out element by element, kept
// apart from the library's composition of elementary rotations.
Eigen::Matrix4d craig_link(double a, double alpha, double d, double theta) {
  const double ct = std::cos(theta), st = std::sin(theta), ca = std::cos(alpha), sa = std::sin(alpha);
  Eigen::Matrix4d t;
  t << ct, -st, 0, a,
       st * ca, ct * ca, -sa, -sa * d,
       st * sa, ct * sa, ca, ca * d,
       0, 0, 0, 1;
  return t;
}

Eigen::Matrix4d oracle_tool(const RobotModel& r, const JointConfig& q) {
  Eigen::Matrix4d t = r.base_pose.matrix();
  for (std::size_t i = 0; i < r.dof(); ++i) {
    const auto& l = r.links[i];
    t = t * craig_link(l.a, l.alpha, l.d, q[i] + l.theta_offset);
  }
  return t * r.tool_transform.matrix();
}

JointConfig random_config(const RobotModel& r, std::mt19937_64& rng, double margin = 0.0) {
  JointConfig q = r.home;
  for (std::size_t i = 0; i < r.dof(); ++i) {
    const double span = r.joint_limits[i].hi - r.joint_limits[i].lo;
    std::uniform_real_distribution<double> d(r.joint_limits[i].lo + margin * span,
                                             r.joint_limits[i].hi - margin * span);
    q[i] = d(rng);
  }
  return q;
}

}  // namespace

TEST(Kinematics, ForwardMatchesExplicitLinkProduct) {
  const auto r = fixtures::panda();
  std::mt19937_64 rng(11);
  for (int k = 0; k < 200; ++k) {
    const auto q = random_config(r, rng);
    const Eigen::Matrix4d want = oracle_tool(r, q);
    const Eigen::Matrix4d got = forward_kinematics(r, q).matrix();
    EXPECT_LT((want - got).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Kinematics, ZeroConfigFlangeHeight) {
  // All joints zero: the arm stands upright with the elbow offsets folded.
  const auto r = fixtures::panda();
  RobotModel bare = r;
  bare.tool_transform = Pose::identity();
  bare.joint_limits[3].hi = 0.1;  // the real joint 4 cannot reach zero
  const JointConfig zero(Eigen::VectorXd::Zero(7));
  const auto p = flange_pose(bare, zero).position;
  EXPECT_NEAR(p.x(), 0.088, 1e-12);
  EXPECT_NEAR(p.y(), 0.0, 1e-12);
  EXPECT_NEAR(p.z(), 0.333 + 0.316 + 0.384, 1e-12);
}

TEST(Kinematics, StandardConventionPlanarArm) {
  RobotModel r;
  r.convention = DhConvention::Standard;
  r.links = {{0.4, 0.0, 0.0, 0.0}, {0.3, 0.0, 0.0, 0.0}};
  r.joint_limits = {{-3.0, 3.0}, {-3.0, 3.0}};
  r.home = {0.0, 0.0};
  r.validate();
  for (double q1 : {-1.0, 0.2, 1.3})
    for (double q2 : {-0.7, 0.0, 2.1}) {
      const auto p = forward_kinematics(r, {q1, q2}).position;
      EXPECT_NEAR(p.x(), 0.4 * std::cos(q1) + 0.3 * std::cos(q1 + q2), 1e-12);
      EXPECT_NEAR(p.y(), 0.4 * std::sin(q1) + 0.3 * std::sin(q1 + q2), 1e-12);
      EXPECT_NEAR(p.z(), 0.0, 1e-12);
    }
}

TEST(Kinematics, JacobianMatchesFiniteDifferences) {
  const auto r = fixtures::panda();
  std::mt19937_64 rng(5);
  const auto q = random_config(r, rng, 0.1);
  const Eigen::MatrixXd jac = tool_jacobian(r, q);
  const double h = 1e-7;
  const Pose p0 = forward_kinematics(r, q);
  for (std::size_t i = 0; i < r.dof(); ++i) {
    JointConfig qh = q;
    qh[i] += h;
    const Pose p1 = forward_kinematics(r, qh);
    const Eigen::Vector3d dp = (p1.position - p0.position) / h;
    const Eigen::Vector3d dw = rotation_error(p1.orientation, p0.orientation) / h;
    EXPECT_LT((jac.block<3, 1>(0, static_cast<Eigen::Index>(i)) - dp).norm(), 1e-5);
    EXPECT_LT((jac.block<3, 1>(3, static_cast<Eigen::Index>(i)) - dw).norm(), 1e-5);
  }
}

TEST(Kinematics, IkRecoversForwardTargets) {
  const auto r = fixtures::panda();
  std::mt19937_64 rng(21);
  const auto seeds = r.default_seeds();
  int ok = 0;
  const int n = 40;
  for (int k = 0; k < n; ++k) {
    const Pose target = forward_kinematics(r, random_config(r, rng, 0.05));
    std::optional<IkSolution> sol;
    for (const auto& s : seeds)
      if ((sol = solve_ik(r, target, s))) break;
    if (!sol) continue;
    ++ok;
    EXPECT_TRUE(r.within_limits(sol->config));
    const Pose got = forward_kinematics(r, sol->config);
    EXPECT_LT((got.position - target.position).norm(), 1e-3);
    EXPECT_LT(angle_between(got.orientation, target.orientation), 1e-2);
  }
  EXPECT_GE(ok, n * 9 / 10);
}

TEST(Kinematics, IkReturnsNothingBeyondReach) {
  const auto r = fixtures::panda();
  const Pose far = tool_pose_at({2.0, 0.0, 0.3}, {0, 0, 1});
  EXPECT_FALSE(solve_ik(r, far, r.home).has_value());
  const auto seeds = r.default_seeds();
  EXPECT_EQ(is_reachable(r, far, seeds), ReachabilityStatus::Unreachable);
}

TEST(Kinematics, SeedOutsideLimitsIsRejected) {
  const auto r = fixtures::panda();
  JointConfig q = r.home;
  q[3] = 0.5;  // joint 4 must stay negative
  try {
    solve_ik(r, forward_kinematics(r, r.home), q);
    FAIL() << "expected JointLimitViolation";
  } catch (const JointLimitViolation& e) {
    EXPECT_EQ(e.index(), 3u);
  }
}

TEST(Kinematics, ToolPoseFacesIntoTheSurface) {
  const Eigen::Vector3d n = Eigen::Vector3d(0.2, -0.1, 1.0).normalized();
  const Eigen::Vector3d tan(1.0, 0.0, 0.0);
  const Pose p = tool_pose_at({0.5, 0.1, 0.2}, n, tan);
  const Eigen::Matrix3d rm = p.rotation_matrix();
  EXPECT_NEAR(rm.col(2).dot(-n), 1.0, 1e-12);
  EXPECT_NEAR(rm.col(0).dot(n), 0.0, 1e-12);
  EXPECT_GT(rm.col(0).dot(tan), 0.9);
  EXPECT_NEAR(rm.determinant(), 1.0, 1e-12);

  const Pose tilted = tool_pose_at({0.5, 0.1, 0.2}, n, tan, 0.1);
  EXPECT_NEAR(angle_between(tilted.orientation, p.orientation), 0.1, 1e-12);
  // The tilt axis is the tool's own y axis.
  EXPECT_LT((tilted.rotation_matrix().col(1) - rm.col(1)).norm(), 1e-12);
}

TEST(Kinematics, ReachabilityGridAgreesWithPointQueries) {
  const auto r = fixtures::panda();
  std::vector<SurfaceSample> samples;
  for (double x = 0.2; x <= 1.0; x += 0.1) samples.push_back({{x, 0.05, 0.1}, {0, 0, 1}});
  const auto seeds = r.default_seeds();
  const auto grid = reachability_grid(r, samples);
  ASSERT_EQ(grid.size(), samples.size());
  bool some_reach = false, some_not = false;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    EXPECT_EQ(grid[i], is_reachable(r, tool_pose_at(samples[i].point, samples[i].normal), seeds));
    some_reach |= grid[i] == ReachabilityStatus::Reachable;
    some_not |= grid[i] == ReachabilityStatus::Unreachable;
  }
  EXPECT_TRUE(some_reach);
  EXPECT_TRUE(some_not);
  EXPECT_STREQ(to_color(ReachabilityStatus::Reachable), "green");
  EXPECT_STREQ(to_color(ReachabilityStatus::Unreachable), "red");
}

TEST(Kinematics, RobotJsonRoundTrip) {
  const auto r = fixtures::panda();
  const auto back = robot_from_json(robot_to_json(r));
  EXPECT_EQ(robot_to_json(back), robot_to_json(r));
  auto bad = robot_to_json(r);
  bad["joint_limits"][0] = {1.0, -1.0};
  EXPECT_THROW(robot_from_json(bad), SchemaError);
}
