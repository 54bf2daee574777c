#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "sandsim/session.hpp"
#include "support.hpp"

using namespace sandsim;

namespace {

void act(Session& s, const std::string& name, nlohmann::json args = nlohmann::json::object()) {
  advance_phase(s, {name, std::move(args)});
}

Session ready_plate(std::shared_ptr<const Scenario> sc = fixtures::flat_plate()) {
  Session s = make_session(std::move(sc));
  act(s, action::kMoveArm, {{"joints", fixtures::overhead_joints()}});
  act(s, action::kScan);
  act(s, action::kScanComplete);
  act(s, action::kConfirmFit);
  return s;
}

Session executing_plate() {
  Session s = ready_plate();
  act(s, action::kStart);
  return s;
}

void run_ticks(Session& s, int n, const CorrectionInput& c = {}) {
  for (int k = 0; k < n && s.phase == Phase::Executing; ++k) tick(s, c, 0.01);
}

}  // namespace

TEST(Session, StructuredHappyPathReachesExecution) {
  Session s = ready_plate();
  EXPECT_EQ(s.phase, Phase::ReachabilityReview);
  ASSERT_TRUE(s.program);
  ASSERT_TRUE(s.registration);
  EXPECT_TRUE(s.registration->accepted);
  for (const auto& seg : s.program->segments) EXPECT_EQ(seg.status, SegmentStatus::Reachable);
  act(s, action::kStart);
  EXPECT_EQ(s.phase, Phase::Executing);
}

TEST(Session, InvalidActionsLeaveTheSessionUntouched) {
  Session s = make_session(fixtures::flat_plate());
  const auto log_size = s.event_log.size();
  EXPECT_THROW(act(s, action::kStart), InvalidAction);
  EXPECT_THROW(act(s, action::kConfirmFit), InvalidAction);
  EXPECT_THROW(act(s, "teleport"), InvalidAction);
  // A joint target beyond the limits fails the action, not the session.
  nlohmann::json bad = fixtures::overhead_joints();
  bad[3] = 1.0;
  EXPECT_THROW(act(s, action::kMoveArm, {{"joints", bad}}), JointLimitViolation);
  EXPECT_EQ(s.phase, Phase::Positioning);
  EXPECT_EQ(s.event_log.size(), log_size);
  EXPECT_EQ(joints_to_json(s.arm), joints_to_json(fixtures::flat_plate()->initial_arm));
  try {
    act(s, action::kResume);
    FAIL();
  } catch (const InvalidAction& e) {
    EXPECT_EQ(e.phase(), "Positioning");
    EXPECT_EQ(e.action(), "resume");
  }
}

TEST(Session, PauseStopsTicksAndResumeContinues) {
  Session s = executing_plate();
  run_ticks(s, 20);
  act(s, action::kPause);
  EXPECT_THROW(tick(s, {}, 0.01), PreconditionError);
  const auto cursor = s.cursor;
  act(s, action::kResume);
  EXPECT_EQ(s.cursor.arc, cursor.arc);
  run_ticks(s, 1);
  EXPECT_GT(s.cursor.arc, cursor.arc);
}

TEST(Session, SandpaperChangeKeepsTheCursorAndGrid) {
  Session s = executing_plate();
  run_ticks(s, 300);
  const auto cursor = s.cursor;
  const auto coating = s.grid.coating;
  EXPECT_LT(s.paper.efficiency, 1.0);
  request_sandpaper_change(s);
  EXPECT_EQ(s.phase, Phase::SandpaperChange);
  EXPECT_THROW(tick(s, {}, 0.01), PreconditionError);
  act(s, action::kSandpaperChanged);
  EXPECT_EQ(s.phase, Phase::Executing);
  EXPECT_DOUBLE_EQ(s.paper.efficiency, 1.0);
  EXPECT_EQ(s.cursor.segment, cursor.segment);
  EXPECT_EQ(s.cursor.arc, cursor.arc);
  EXPECT_EQ(s.grid.coating, coating);
  int starts = 0, ends = 0;
  for (const auto& e : s.event_log) {
    starts += e.event == "sandpaper_change_start";
    ends += e.event == "sandpaper_change_end";
  }
  EXPECT_EQ(starts, 1);
  EXPECT_EQ(ends, 1);
}

TEST(Session, TickRejectsBadTimeSteps) {
  Session s = executing_plate();
  EXPECT_THROW(tick(s, {}, 0.0), PreconditionError);
  EXPECT_THROW(tick(s, {}, 0.06), PreconditionError);
  EXPECT_EQ(s.ticks, 0u);
}

TEST(Session, ForceSettlesWithinFiveTimeConstants) {
  Session s = executing_plate();
  run_ticks(s, 50);  // 5 tau at 100 Hz
  const double want = s.program->segments[0].nominal.force;
  EXPECT_LT(std::abs(s.tracked_force - want), want * std::exp(-5.0) * 1.1);
  run_ticks(s, 50, CorrectionInput::coupled(1.0));
  EXPECT_GT(s.tracked_force, want);
  EXPECT_DOUBLE_EQ(s.last_command.force, want + 10.0);
}

TEST(Session, BacktrackWalksIntoThePreviousSegment) {
  Session s = executing_plate();
  while (s.cursor.segment == 0) run_ticks(s, 1);
  run_ticks(s, 20);
  ASSERT_EQ(s.cursor.segment, 1u);
  double arc = s.cursor.arc;
  for (int k = 0; k < 19; ++k) {
    run_ticks(s, 1, CorrectionInput::coupled(0.0, true));
    EXPECT_LT(s.cursor.arc, arc);
    arc = s.cursor.arc;
  }
  run_ticks(s, 30, CorrectionInput::coupled(0.0, true));
  EXPECT_EQ(s.cursor.segment, 0u);
  EXPECT_EQ(s.program->segments[0].status, SegmentStatus::Reachable);
  bool reopened = false;
  for (const auto& e : s.event_log) reopened |= e.event == "segment_reopened";
  EXPECT_TRUE(reopened);
  // Backtracking past the first segment holds at its start.
  run_ticks(s, 2000, CorrectionInput::coupled(0.0, true));
  EXPECT_EQ(s.cursor.segment, 0u);
  EXPECT_EQ(s.cursor.arc, 0.0);
}

TEST(Session, ProgramRunsToCompletion) {
  Session s = executing_plate();
  const double before = s.grid.coating_volume();
  run_ticks(s, 100000);
  EXPECT_EQ(s.phase, Phase::Complete);
  for (const auto& seg : s.program->segments) EXPECT_EQ(seg.status, SegmentStatus::Completed);
  EXPECT_LT(s.grid.coating_volume(), before);
  EXPECT_EQ(s.event_log.back().event, "execution_complete");
  EXPECT_GT(session_metrics(s).removed_fraction, 0.5);
  EXPECT_THROW(act(s, action::kStart), InvalidAction);
}

TEST(Session, RepositionMovesThePartAndKeepsCompletedWork) {
  Session s = executing_plate();
  run_ticks(s, 100000);
  ASSERT_EQ(s.phase, Phase::Complete);
  const Pose before = s.grid.object_pose;
  act(s, action::kReposition, {{"rotate_z_deg", 180.0}, {"translation", {0.0, 0.02, 0.0}}});
  EXPECT_EQ(s.phase, Phase::Repositioning);
  EXPECT_FALSE(s.registration);
  EXPECT_LT((s.grid.object_pose.position - before.position - Eigen::Vector3d(0, 0.02, 0)).norm(), 1e-12);
  EXPECT_NEAR(angle_between(s.grid.object_pose.orientation, before.orientation), M_PI, 1e-9);
  act(s, action::kScan);
  act(s, action::kScanComplete);
  act(s, action::kConfirmFit);
  for (const auto& seg : s.program->segments) EXPECT_EQ(seg.status, SegmentStatus::Completed);
  EXPECT_THROW(act(s, action::kStart), InvalidAction);  // nothing left to sand
}

TEST(Session, SameSeedSameEventLog) {
  auto j = fixtures::flat_plate_json();
  j["scan"]["noise_sigma"] = 0.002;
  const auto sc = std::make_shared<const Scenario>(scenario_from_json(j));
  auto run = [&](std::uint64_t seed) {
    Session s = make_session(sc, seed);
    act(s, action::kMoveArm, {{"joints", fixtures::overhead_joints()}});
    act(s, action::kScan);
    act(s, action::kScanComplete);
    act(s, action::kConfirmFit);
    act(s, action::kStart);
    for (int k = 0; k < 500; ++k) tick(s, CorrectionInput::coupled(std::sin(k * 0.05)), 0.01, k);
    return events_to_jsonl(s.event_log);
  };
  const auto a = run(11);
  EXPECT_EQ(a, run(11));
  EXPECT_NE(a, run(12));
}

TEST(Session, RandomActionSequencesKeepPhasesConsistent) {
  const auto sc = fixtures::flat_plate();
  const std::vector<std::string> names{action::kMoveArm,   action::kScan,  action::kScanComplete,
                                       action::kConfirmFit, action::kStart, action::kPause,
                                       action::kResume,    action::kChangeSandpaper, action::kSandpaperChanged,
                                       action::kReposition, action::kNudge, action::kAutoRegister,
                                       action::kSetMarkers, action::kRerun};
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 5; ++trial) {
    Session s = make_session(sc);
    for (int k = 0; k < 60; ++k) {
      const std::string& a = names[rng() % names.size()];
      nlohmann::json args = nlohmann::json::object();
      if (a == action::kMoveArm) args["joints"] = fixtures::overhead_joints();
      if (a == action::kNudge) args["translation"] = {0.001, 0.0, 0.0};
      if (a == action::kReposition) args["rotate_z_deg"] = 10.0;
      const Phase before = s.phase;
      const auto log = s.event_log.size();
      try {
        act(s, a, args);
      } catch (const Error&) {  // every failure is atomic
        EXPECT_EQ(s.phase, before);
        EXPECT_EQ(s.event_log.size(), log);
      }
      if (s.phase == Phase::Executing) run_ticks(s, 10);
      else EXPECT_THROW(tick(s, {}, 0.01), PreconditionError);
    }
  }
}
