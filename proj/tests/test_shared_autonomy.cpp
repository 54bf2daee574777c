#include <cmath>
#include <random>
#include <thread>

#include <gtest/gtest.h>

#include "sandsim/shared_autonomy.hpp"

using namespace sandsim;

namespace {

const CommandVector kNominal{1.0, 15.0, 0.0, 0.0};

}  // namespace

TEST(SharedAutonomy, FullCoupledInputScalesEveryAxis) {
  const auto d = map_correction(CorrectionInput::coupled(1.0), SaturationSet{});
  EXPECT_DOUBLE_EQ(d.feed_scale, -0.25);
  EXPECT_DOUBLE_EQ(d.force, 10.0);
  EXPECT_DOUBLE_EQ(d.pitch, 0.025);
  EXPECT_DOUBLE_EQ(d.lateral_offset, 0.0);
}

TEST(SharedAutonomy, ArbitrationClampsIntoTheSafetyBox) {
  const CommandVector n{1.0, 48.0, 0.0, 0.0};
  const auto x = arbitrate(n, map_correction(CorrectionInput::independent({0, 1, 0, 0}), SaturationSet{}));
  EXPECT_DOUBLE_EQ(x.force, 50.0);
  const auto y = arbitrate({1.0, 2.0, 0.14, 25.0}, {-0.5, -10.0, 0.05, 10.0});
  EXPECT_DOUBLE_EQ(y.force, 0.0);
  EXPECT_DOUBLE_EQ(y.pitch, 0.15);
  EXPECT_DOUBLE_EQ(y.lateral_offset, 30.0);
}

TEST(SharedAutonomy, ZeroCorrectionIsBitExactNeutral) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> f(0.0, 3.0), F(0.0, 50.0), p(-0.15, 0.15), l(-30.0, 30.0);
  for (int k = 0; k < 1000; ++k) {
    const CommandVector n{f(rng), F(rng), p(rng), l(rng)};
    EXPECT_EQ(arbitrate(n, map_correction(CorrectionInput::coupled(0.0), SaturationSet{})), n);
    EXPECT_EQ(arbitrate(n, map_correction(CorrectionInput::independent({0, 0, 0, 0}), SaturationSet{})), n);
  }
}

TEST(SharedAutonomy, CoupledCorrectionsStayOnTheWeightLine) {
  const SaturationSet sat;
  const auto s = sat.bound.as_array();
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int k = 0; k < 500; ++k) {
    const double uu = u(rng);
    const auto d = map_correction(CorrectionInput::coupled(uu), sat).as_array();
    for (std::size_t i = 0; i < 4; ++i) {
      EXPECT_NEAR(d[i], uu * kAbrasivenessCoupling[i] * s[i], 1e-15);
      EXPECT_LE(std::abs(d[i]), s[i]);
    }
  }
}

TEST(SharedAutonomy, ArbitrationIsMonotoneInTheInput) {
  const SaturationSet sat;
  double prev_force = -1.0, prev_feed = 10.0;
  for (int k = -100; k <= 100; ++k) {
    const auto x = arbitrate(kNominal, map_correction(CorrectionInput::coupled(k / 100.0), sat));
    EXPECT_GE(x.force, prev_force);
    EXPECT_LE(x.feed_scale, prev_feed);
    prev_force = x.force;
    prev_feed = x.feed_scale;
  }
}

TEST(SharedAutonomy, RawInputIsClampedAndNanIsZero) {
  const auto d = map_correction(CorrectionInput{Independent{{5.0, NAN, -7.0, 0.5}}, false}, SaturationSet{});
  EXPECT_DOUBLE_EQ(d.feed_scale, 0.5);
  EXPECT_DOUBLE_EQ(d.force, 0.0);
  EXPECT_DOUBLE_EQ(d.pitch, -0.05);
  EXPECT_DOUBLE_EQ(d.lateral_offset, 5.0);
}

TEST(SharedAutonomy, CouplingWeightsMustBeNormalized) {
  EXPECT_NO_THROW(check_coupling(kAbrasivenessCoupling));
  EXPECT_THROW(check_coupling({0.5, 0.5, 0.0, 0.0}), PreconditionError);
  EXPECT_THROW(map_correction(CorrectionInput::coupled(1.0), SaturationSet{}, {2.0, 0, 0, 0}), PreconditionError);
}

TEST(SharedAutonomy, BacktrackReversesAtNominalFeed) {
  EXPECT_DOUBLE_EQ(backtrack_rate(CorrectionInput::coupled(0.0, true), 50.0, 0.5), -50.0);
  EXPECT_DOUBLE_EQ(backtrack_rate(CorrectionInput::coupled(0.0, false), 50.0, 0.75), 37.5);
}

TEST(SharedAutonomy, WireFormatRejectsOutOfRange) {
  const auto c = correction_from_json({{"mode", "independent"}, {"axes", {0.1, -0.2, 1.0, -1.0}}, {"backtrack", true}});
  EXPECT_TRUE(c.backtrack);
  EXPECT_EQ(correction_to_json(c), correction_to_json(correction_from_json(correction_to_json(c))));
  EXPECT_THROW(correction_from_json({{"mode", "coupled"}, {"u", 1.5}}), SchemaError);
  EXPECT_THROW(correction_from_json({{"mode", "independent"}, {"axes", {0, 0, 0}}}), SchemaError);
  EXPECT_THROW(correction_from_json({{"mode", "sideways"}}), SchemaError);
  EXPECT_THROW(correction_from_json({{"mode", "coupled"}, {"u", "fast"}}), SchemaError);
}

TEST(SharedAutonomy, MailboxKeepsOnlyTheLatest) {
  CorrectionMailbox box;
  EXPECT_EQ(box.read().sequence, 0u);
  std::thread writer([&] {
    for (std::uint64_t i = 1; i <= 10000; ++i) box.post(CorrectionInput::coupled(i / 10000.0), i);
  });
  std::uint64_t last = 0;
  while (last < 10000) {
    const auto slot = box.read();
    EXPECT_GE(slot.sequence, last);  // never goes back to an older sample
    if (slot.sequence > 0)
      EXPECT_DOUBLE_EQ(std::get<Coupled1Dof>(slot.input.mode).u, slot.sequence / 10000.0);
    last = slot.sequence;
  }
  writer.join();
}
