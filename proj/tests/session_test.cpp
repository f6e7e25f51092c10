#include <gtest/gtest.h>

#include <random>

#include "sleepguard/session.hpp"

using namespace sleepguard;
using namespace sleepguard::session;

namespace {

const RangeTable kTable = RangeTable::standard();

SensorFrame frame(Seconds minute, bool pressure, Bwv bwv, double cps, double eye = 0,
                  StressState s = StressState::LowNormal) {
  SensorFrame f{minute * 60, pressure, bwv, cps, class_midpoint_sample(s, kTable)};
  f.sample.eye_movement = eye;
  return f;
}

// The stage rules as an if/else chain over the raw inputs, with the
// pre-onset fallback reported as Awake.
SleepStage stage_oracle(bool t2_set, bool bwv_high, double cps, double em, Seconds since_t1) {
  if (!bwv_high && since_t1 >= 1800 && 12 < cps && cps < 14) return SleepStage::Drifting;
  if (t2_set && bwv_high && cps < 4) return SleepStage::DeepSleep;
  if (t2_set && bwv_high && em != 0) return SleepStage::REM;
  if (t2_set) return SleepStage::LightSleep;
  return SleepStage::Awake;
}

Outlook outlook_oracle(const std::vector<StressState>& w, double L) {
  auto frac = [&](std::initializer_list<StressState> set) {
    double c = 0;
    for (auto s : w) {
      for (auto t : set) c += s == t ? 1 : 0;
    }
    return c / static_cast<double>(w.size());
  };
  using S = StressState;
  if (frac({S::Medium, S::High, S::MediumHigh}) >= 0.8 && 35 < L && L < 45) return Outlook::MediumHigh;
  if (frac({S::Medium, S::LowNormal, S::MediumLow}) >= 0.6 && 20 < L && L < 35) return Outlook::MediumLow;
  if (frac({S::LowNormal}) >= 0.8 && 10 < L && L < 20) return Outlook::LowNormal;
  return Outlook::Indeterminate;
}

}  // namespace

TEST(Stage, DriftingAfterThirtyMinutes) {
  Session s;
  s.step(frame(0, true, Bwv::Low, 20));
  EXPECT_EQ(s.t1(), 0);
  EXPECT_EQ(s.stage(), SleepStage::Awake);
  s.step(frame(30, true, Bwv::Low, 13));
  EXPECT_EQ(s.t2(), 30 * 60);
  EXPECT_EQ(s.stage(), SleepStage::Drifting);
  s.step(frame(45, true, Bwv::High, 3));
  EXPECT_EQ(s.stage(), SleepStage::DeepSleep);
  s.step(frame(60, true, Bwv::High, 6, 62));
  EXPECT_EQ(s.stage(), SleepStage::REM);
  s.step(frame(70, true, Bwv::Low, 8, 62));
  EXPECT_EQ(s.stage(), SleepStage::LightSleep);
}

TEST(Stage, NoOnsetBeforeThirtyMinutes) {
  Session s;
  s.step(frame(0, true, Bwv::Low, 20));
  s.step(frame(29, true, Bwv::Low, 13));
  EXPECT_FALSE(s.t2());
  EXPECT_EQ(s.stage(), SleepStage::Awake);
}

TEST(Stage, DriftingBandIsExclusive) {
  EXPECT_EQ(classify_stage(false, Bwv::Low, 12.0, 0, 1800), SleepStage::Awake);
  EXPECT_EQ(classify_stage(false, Bwv::Low, 14.0, 0, 1800), SleepStage::Awake);
  EXPECT_EQ(classify_stage(false, Bwv::Low, 12.01, 0, 1800), SleepStage::Drifting);
}

TEST(Stage, FullDiscreteGridMatchesRuleChain) {
  const double cps_values[] = {0, 2, 3.99, 4, 6, 12, 12.5, 13, 13.5, 14, 20};
  const double eye_values[] = {0, 62};
  const Seconds since_values[] = {0, 1799, 1800, 7200};
  std::size_t n = 0;
  for (bool t2_set : {false, true}) {
    for (bool high : {false, true}) {
      for (double cps : cps_values) {
        for (double em : eye_values) {
          for (Seconds since : since_values) {
            ASSERT_EQ(classify_stage(t2_set, high ? Bwv::High : Bwv::Low, cps, em, since),
                      stage_oracle(t2_set, high, cps, em, since))
                << t2_set << high << " cps " << cps << " em " << em << " since " << since;
            ++n;
          }
        }
      }
    }
  }
  EXPECT_EQ(n, 2u * 2 * 11 * 2 * 4);
}

TEST(Wake, AlertAndRelaxed) {
  for (bool alert : {true, false}) {
    Session s;
    s.step(frame(0, true, Bwv::Low, 20));
    s.step(frame(31, true, Bwv::Low, 13));
    s.step(frame(40, true, Bwv::Low, 8));
    s.step(frame(90, false, Bwv::Low, alert ? 20 : 9));
    EXPECT_EQ(s.t3(), 90 * 60);
    EXPECT_EQ(s.stage(), alert ? SleepStage::WokeAlert : SleepStage::WokeRelaxed);
    EXPECT_DOUBLE_EQ(*s.latency_minutes(), 31.0);
    EXPECT_DOUBLE_EQ(*s.slept_minutes(), 59.0);
    EXPECT_TRUE(s.closed());
    EXPECT_THROW(s.step(frame(91, true, Bwv::Low, 8)), SequencingError);
  }
}

TEST(Wake, HighVoltageWakeIsRelaxed) {
  Session s;
  s.step(frame(0, true, Bwv::Low, 20));
  s.step(frame(30, true, Bwv::Low, 13));
  s.step(frame(60, false, Bwv::High, 20));
  EXPECT_EQ(s.stage(), SleepStage::WokeRelaxed);
}

TEST(Session, OutOfOrderFrameRejected) {
  Session s;
  s.step(frame(5, true, Bwv::Low, 20));
  EXPECT_THROW(s.step(frame(5, true, Bwv::Low, 20)), SequencingError);
  EXPECT_THROW(s.step(frame(4, true, Bwv::Low, 20)), SequencingError);
}

TEST(Session, IgnoresFramesBeforePressure) {
  Session s;
  s.step(frame(0, false, Bwv::Low, 20));
  s.step(frame(3, false, Bwv::Low, 20));
  EXPECT_FALSE(s.t1());
  s.step(frame(4, true, Bwv::Low, 20));
  EXPECT_EQ(s.t1(), 240);
}

TEST(Session, SegmentsTileFromT1ToT3) {
  auto frames = synth_night({}, 3);
  auto s = run_session(frames);
  ASSERT_TRUE(s.t3());
  const auto& seg = s.segments();
  ASSERT_FALSE(seg.empty());
  EXPECT_EQ(seg.front().start, *s.t1());
  EXPECT_EQ(seg.back().end, *s.t3());
  for (std::size_t i = 1; i < seg.size(); ++i) {
    EXPECT_EQ(seg[i].start, seg[i - 1].end);
    EXPECT_NE(seg[i].stage, seg[i - 1].stage);
  }
  EXPECT_LE(*s.t1(), *s.t2());
  EXPECT_LE(*s.t2(), *s.t3());
  bool saw_deep = false, saw_rem = false;
  for (const auto& x : seg) {
    saw_deep |= x.stage == SleepStage::DeepSleep;
    saw_rem |= x.stage == SleepStage::REM;
  }
  EXPECT_TRUE(saw_deep);
  EXPECT_TRUE(saw_rem);
}

TEST(Windows, SixtyMinutesOfLowRowsGiveFourLowWindows) {
  NightPlan plan;
  plan.sleep = 60 * 60;
  auto s = run_session(synth_night(plan, 1));
  auto w = detect_windows(s, crisp_classifier());
  ASSERT_EQ(w.size(), 4u);
  for (const auto& x : w) {
    EXPECT_EQ(x.detected, StressState::LowNormal);
    EXPECT_EQ(x.end - x.start, kWindowSeconds);
    EXPECT_FALSE(x.carried);
  }
}

TEST(Windows, ClassifiesTheMeanOfAlternatingRows) {
  Session s;
  s.step(frame(0, true, Bwv::Low, 20));
  s.step(frame(30, true, Bwv::Low, 13, 0, StressState::LowNormal));
  s.step(frame(35, true, Bwv::Low, 8, 0, StressState::High));
  s.step(frame(45, false, Bwv::Low, 20));
  auto lo = class_midpoint_sample(StressState::LowNormal, kTable).to_array();
  auto hi = class_midpoint_sample(StressState::High, kTable).to_array();
  std::array<double, kFeatureCount> mean{};
  for (std::size_t i = 0; i < kFeatureCount; ++i) mean[i] = (lo[i] + hi[i]) / 2;
  mean[static_cast<std::size_t>(Feature::EyeMovement)] = 0;
  auto w = detect_windows(s, crisp_classifier());
  ASSERT_EQ(w.size(), 1u);
  EXPECT_EQ(w[0].frame_count, 2u);
  EXPECT_EQ(w[0].detected, classify_crisp(SleepSample::from_array(mean), kTable));
}

TEST(Windows, TrailingRemainderRules) {
  for (Seconds extra : {0, 4 * 60, 5 * 60, 14 * 60}) {
    NightPlan plan;
    plan.sleep = 60 * 60 + extra;
    auto s = run_session(synth_night(plan, 2));
    auto w = detect_windows(s, crisp_classifier());
    EXPECT_EQ(w.size(), extra >= 5 * 60 ? 5u : 4u) << extra;
    EXPECT_EQ(w.front().start, *s.t2());
    EXPECT_EQ(w.back().end, *s.t3());
    for (std::size_t i = 1; i < w.size(); ++i) EXPECT_EQ(w[i].start, w[i - 1].end);
  }
}

TEST(Windows, EmptyWindowCarriesPreviousState) {
  Session s;
  s.step(frame(0, true, Bwv::Low, 20));
  s.step(frame(30, true, Bwv::Low, 13, 0, StressState::High));
  s.step(frame(75, true, Bwv::Low, 8, 0, StressState::LowNormal));
  s.step(frame(90, false, Bwv::Low, 20));
  auto w = detect_windows(s, crisp_classifier());
  ASSERT_EQ(w.size(), 4u);
  EXPECT_EQ(w[0].detected, StressState::High);
  EXPECT_TRUE(w[1].carried);
  EXPECT_EQ(w[1].detected, StressState::High);
  EXPECT_TRUE(w[2].carried);
  EXPECT_EQ(w[3].detected, StressState::LowNormal);
}

TEST(Windows, RequireCompletedSleep) {
  Session s;
  s.step(frame(0, true, Bwv::Low, 20));
  s.step(frame(30, true, Bwv::Low, 13));
  EXPECT_THROW(detect_windows(s, crisp_classifier()), std::logic_error);
}

TEST(Predict, DocumentedExamples) {
  using S = StressState;
  std::vector<S> mostly_medium{S::Medium, S::Medium, S::Medium, S::Medium, S::LowNormal};
  EXPECT_EQ(predict_next_day(mostly_medium, 40).sp, Outlook::MediumHigh);
  std::vector<S> mostly_low{S::LowNormal, S::LowNormal, S::LowNormal, S::LowNormal, S::High};
  EXPECT_EQ(predict_next_day(mostly_low, 15).sp, Outlook::LowNormal);
  std::vector<S> split{S::LowNormal, S::High, S::LowNormal, S::High};
  EXPECT_EQ(predict_next_day(split, 60).sp, Outlook::Indeterminate);
  for (double L = 0; L <= 90; L += 0.5) EXPECT_EQ(predict_next_day(split, L).sp, outlook_oracle(split, L));
  EXPECT_EQ(predict_next_day(mostly_low, 30).sp, Outlook::MediumLow);
  EXPECT_THROW(predict_next_day(std::vector<S>{}, 15), std::invalid_argument);
  EXPECT_THROW(predict_next_day(mostly_low, -1), std::invalid_argument);
}

TEST(Predict, BandEdgesAreExclusive) {
  std::vector<StressState> medium(5, StressState::Medium);
  EXPECT_EQ(predict_next_day(medium, 35).sp, Outlook::Indeterminate);
  EXPECT_EQ(predict_next_day(medium, 45).sp, Outlook::Indeterminate);
  EXPECT_EQ(predict_next_day(medium, 20).sp, Outlook::Indeterminate);
  EXPECT_EQ(predict_next_day(medium, 34.9).sp, Outlook::MediumLow);
}

TEST(Predict, MatchesRuleOracleOnRandomMixes) {
  std::mt19937_64 gen(2024);
  for (int i = 0; i < 10000; ++i) {
    std::size_t n = 1 + gen() % 40;
    std::vector<StressState> w(n);
    int bias = static_cast<int>(gen() % 6);
    for (auto& s : w) s = static_cast<StressState>(bias < 5 && gen() % 4 != 0 ? bias : static_cast<int>(gen() % 5));
    double L = static_cast<double>(gen() % 121) / 2.0;
    ASSERT_EQ(predict_next_day(w, L).sp, outlook_oracle(w, L)) << i;
  }
}

TEST(Control, TwoHighWindowsTriggerAmbience) {
  using S = StressState;
  ControlInput in;
  in.detected = {S::Medium, S::High, S::High, S::High, S::LowNormal, S::High};
  auto a = control_actions(in);
  ASSERT_EQ(a.size(), 2u);
  EXPECT_EQ(a[0], (ActionRecord{Phase::DuringSleep, "regulate-temperature", "high-twice", 2}));
  EXPECT_EQ(a[1], (ActionRecord{Phase::DuringSleep, "play-audio", "high-twice", 2}));
}

TEST(Control, OnPillowAndLatency) {
  ControlInput in;
  in.on_pillow = true;
  in.latency_minutes = 10;
  auto a = control_actions(in);
  ASSERT_EQ(a.size(), 2u);
  in.latency_minutes = 15;
  a = control_actions(in);
  ASSERT_EQ(a.size(), 3u);
  EXPECT_EQ(a[1].action, "dim-lights");
}

TEST(Control, NextDayRemindersFollowPrediction) {
  auto actions_for = [](Outlook o) {
    ControlInput in;
    NextDayPrediction p;
    p.sp = o;
    in.prediction = p;
    std::vector<std::string> names;
    for (const auto& a : control_actions(in)) {
      EXPECT_EQ(a.phase, Phase::NextDay);
      names.push_back(a.action);
    }
    return names;
  };
  using V = std::vector<std::string>;
  EXPECT_EQ(actions_for(Outlook::LowNormal), (V{"hydrate"}));
  EXPECT_EQ(actions_for(Outlook::MediumLow), (V{"hydrate", "mood-food"}));
  EXPECT_EQ(actions_for(Outlook::MediumHigh), (V{"hydrate", "mood-food", "walk", "photo-notification"}));
  EXPECT_EQ(actions_for(Outlook::Indeterminate), (V{"hydrate"}));
}

TEST(Control, NothingWithoutPressureOrWindows) { EXPECT_TRUE(control_actions({}).empty()); }

TEST(Control, ActionLineIsJson) {
  ActionRecord a{Phase::NextDay, "walk", "sp=MH", std::nullopt};
  EXPECT_EQ(action_line(a), R"({"phase":"next-day","action":"walk","trigger":"sp=MH"})");
  a.window = 4;
  EXPECT_EQ(action_line(a), R"({"phase":"next-day","action":"walk","trigger":"sp=MH","window":4})");
}

TEST(Replay, CsvRoundTrip) {
  NightPlan plan;
  plan.sleep = 3600;
  auto frames = synth_night(plan, 5);
  auto text = frames_to_csv(frames);
  EXPECT_EQ(text.substr(0, text.find('\n')), kReplayCsvHeader);
  EXPECT_EQ(frames_from_csv(text), frames);
}

TEST(Replay, RejectsMalformedRows) {
  std::string header(kReplayCsvHeader);
  EXPECT_THROW(frames_from_csv(header + "\n0,1,low,20,7,45,17,55,96,65,5\n"), CsvError);
  EXPECT_THROW(frames_from_csv(header + "\n0,2,low,20,7,45,17,55,96,65,5,97\n"), CsvError);
  EXPECT_THROW(frames_from_csv(header + "\n0,1,mid,20,7,45,17,55,96,65,5,97\n"), CsvError);
  EXPECT_THROW(frames_from_csv("t,p\n"), CsvError);
  try {
    frames_from_csv(header + "\n0,1,low,20,7,45,17,55,96,65,5,97\n0.5,1,low,20,7,45,17,55,96,65,5,97\n");
    FAIL();
  } catch (const CsvError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
}

TEST(Night, FullPipelinePredictsFromScriptedNight) {
  NightPlan plan;
  plan.latency = 40 * 60;
  plan.state = StressState::Medium;
  auto s = run_session(synth_night(plan, 8));
  auto w = detect_windows(s, crisp_classifier());
  EXPECT_EQ(w.size(), 32u);
  auto p = predict_next_day(w, *s.latency_minutes());
  EXPECT_EQ(p.sp, Outlook::MediumHigh);
  EXPECT_DOUBLE_EQ(p.slept_minutes, 480.0);
}
