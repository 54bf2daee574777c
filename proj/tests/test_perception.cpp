#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "sandsim/perception.hpp"
#include "support.hpp"

using namespace sandsim;

namespace {

const SurfaceShape kPanel{SurfaceKind::Cylinder, 0.6, 0.4, 1.5};
const Pose kTruth = Pose::translation({0.75, 0.0, 0.05});

// Renders a cloud straight from a free camera, bypassing the arm.
PointCloud look_at(const SurfaceGrid& grid, const Eigen::Vector3d& from, double sigma, std::uint64_t seed,
                   int stride = 6) {
  CameraIntrinsics cam;
  cam.ray_stride = stride;
  const Eigen::Vector3d target = grid.object_pose.position;
  const Pose camera = tool_pose_at(from, (from - target).normalized());
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, sigma);
  PointCloud c;
  for (int y = 0; y < cam.height; y += stride)
    for (int x = 0; x < cam.width; x += stride)
      if (auto hit = cast_pixel(camera, cam, grid, x + 0.5, y + 0.5)) {
        if (sigma > 0.0) *hit += Eigen::Vector3d(n(rng), n(rng), n(rng));
        c.points.push_back(*hit);
      }
  return c;
}

SurfaceGrid panel(const Pose& pose = kTruth) { return SurfaceGrid::make(kPanel, 0.002, 100.0, pose); }

double position_error(const Pose& a, const Pose& b) { return (a.position - b.position).norm(); }

}  // namespace

TEST(Perception, NoiselessScanPointsLieOnTheSurface) {
  const auto grid = panel();
  const auto cloud = look_at(grid, {0.75, 0.1, 0.75}, 0.0, 1);
  ASSERT_GT(cloud.size(), 1000u);
  const Pose inv = grid.object_pose.inverse();
  for (const auto& p : cloud.points) {
    const auto c = grid.shape.closest(inv * p);
    EXPECT_LT((c.point - inv * p).norm(), 1e-9);
  }
}

TEST(Perception, ArmScanIsSeededAndDeterministic) {
  const auto sc = fixtures::load_demo("structured_demo.json");
  const auto grid = sc.make_grid();
  const auto script = fixtures::load_script("structured_two_configs.json");
  const JointConfig q = joints_from_json(script["steps"][0]["args"]["joints"]);
  const std::vector<JointConfig> poses{q};
  const auto a = simulate_scan(sc.robot, grid, poses, sc.scan.camera, 0.002, 5);
  const auto b = simulate_scan(sc.robot, grid, poses, sc.scan.camera, 0.002, 5);
  const auto c = simulate_scan(sc.robot, grid, poses, sc.scan.camera, 0.002, 6);
  ASSERT_GT(a.size(), 100u);
  EXPECT_EQ(a.points, b.points);
  EXPECT_NE(a.points, c.points);

  // Looking straight up at the ceiling sees nothing.
  const std::vector<JointConfig> away{sc.robot.home};
  auto up = grid;
  up.object_pose = Pose::translation({0.0, 0.0, -5.0});
  EXPECT_THROW(simulate_scan(sc.robot, up, away, sc.scan.camera, 0.0, 1), EmptyScan);
  EXPECT_THROW(simulate_scan(sc.robot, grid, poses, sc.scan.camera, -1.0, 1), PreconditionError);
}

TEST(Perception, ZeroNoiseTruthIsAFixedPoint) {
  const auto grid = panel();
  const auto cloud = look_at(grid, {0.75, 0.1, 0.75}, 0.0, 1);
  const auto r = auto_register(cloud, kPanel, kTruth);
  EXPECT_LT(position_error(r.object_pose, kTruth), 1e-6);
  EXPECT_LT(angle_between(r.object_pose.orientation, kTruth.orientation), 1e-6);
  EXPECT_LT(r.rms_residual, 1e-9);
  EXPECT_DOUBLE_EQ(r.inlier_fraction, 1.0);
}

TEST(Perception, ConvergesFromARoughGuess) {
  const auto grid = panel();
  const auto cloud = look_at(grid, {0.75, 0.1, 0.75}, 0.002, 3);
  const PoseNudge off{{0.012, -0.010, 0.008}, {0.02, -0.03, 0.06}};
  const auto r = auto_register(cloud, kPanel, off.apply(kTruth));
  EXPECT_LT(position_error(r.object_pose, kTruth), 0.005);
  EXPECT_LT(angle_between(r.object_pose.orientation, kTruth.orientation), 2.0 * M_PI / 180.0);
  for (std::size_t i = 1; i < r.residual_history.size(); ++i)
    EXPECT_LE(r.residual_history[i], r.residual_history[i - 1]);
  EXPECT_GT(r.inlier_fraction, 0.9);
  EXPECT_FALSE(r.accepted);
}

TEST(Perception, RankingPrefersTheMatchingGeometry) {
  const auto grid = panel();
  const auto cloud = look_at(grid, {0.75, 0.1, 0.75}, 0.001, 4);
  const std::vector<GeometryCandidate> cands{{"flat", {SurfaceKind::Flat, 0.6, 0.4, 0.0}}, {"curved", kPanel}};
  const auto ranked = rank_geometries(cloud, cands, kTruth);
  ASSERT_EQ(ranked.size(), 2u);
  EXPECT_EQ(ranked[0].geometry_id, "curved");
  EXPECT_LT(ranked[0].rms_residual, ranked[1].rms_residual);
}

TEST(Perception, NudgeAndConfirm) {
  const auto grid = panel();
  const auto cloud = look_at(grid, {0.75, 0.1, 0.75}, 0.0, 1);
  const auto r = auto_register(cloud, kPanel, kTruth);
  const PoseNudge n{{0.01, 0.0, 0.0}, {0.0, 0.0, 0.02}};
  const auto moved = apply_manual_adjustment(r, n);
  EXPECT_NEAR(position_error(moved.object_pose, r.object_pose), 0.01, 1e-12);
  EXPECT_GT(moved.rms_residual, r.rms_residual);
  const auto back = apply_manual_adjustment(moved, n.inverse());
  EXPECT_LT(position_error(back.object_pose, r.object_pose), 1e-12);
  EXPECT_LT(angle_between(back.object_pose.orientation, r.object_pose.orientation), 1e-12);

  const auto ok = confirm_fit(r);
  EXPECT_TRUE(ok.accepted);
  EXPECT_THROW(confirm_fit(ok), AlreadyAccepted);
  EXPECT_THROW(apply_manual_adjustment(ok, n), AlreadyAccepted);
}

TEST(Perception, DegenerateCloudsAreRejected) {
  PointCloud line;
  for (int i = 0; i < 200; ++i) line.points.emplace_back(0.5 + 0.001 * i, 0.0, 0.05);
  EXPECT_THROW(auto_register(line, kPanel, kTruth), DegenerateCloud);
  PointCloud few;
  few.points.resize(10, Eigen::Vector3d::Zero());
  EXPECT_THROW(auto_register(few, kPanel, kTruth), PreconditionError);
}

TEST(Perception, PlyHeaderAndVertexCount) {
  PointCloud c;
  c.points = {{0.1, 0.2, 0.3}, {1.0, -2.0, 0.5}};
  const std::string path = ::testing::TempDir() + "cloud.ply";
  write_ply(c, path);
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  EXPECT_EQ(text.rfind("ply\nformat ascii 1.0\nelement vertex 2\n", 0), 0u);
  EXPECT_NE(text.find("end_header\n0.1 0.2 0.3\n1 -2 0.5\n"), std::string::npos);
  std::remove(path.c_str());
}
