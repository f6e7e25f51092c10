#pragma once

// One night on the pillow: a frame-driven sleep-stage state machine, 15-minute
// stress windows over the sleep period, next-day prediction and the control
// actions derived from both.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "sleepguard/physio.hpp"

namespace sleepguard::session {

using Seconds = std::int64_t;

enum class Bwv : std::uint8_t { Low, High };

struct SensorFrame {
  Seconds t = 0;
  bool pressure = false;
  Bwv bwv = Bwv::Low;
  double cps = 0;
  SleepSample sample;

  friend bool operator==(const SensorFrame&, const SensorFrame&) = default;
};

enum class SleepStage : std::uint8_t { Awake, Drifting, LightSleep, DeepSleep, REM, WokeAlert, WokeRelaxed };

std::string_view stage_name(SleepStage s);

struct StageSegment {
  Seconds start = 0;
  Seconds end = 0;
  SleepStage stage = SleepStage::Awake;

  friend bool operator==(const StageSegment&, const StageSegment&) = default;
};

class SequencingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Stage for a frame while on the pillow. `onset_known` is whether t2 was
// already set before this frame.
SleepStage classify_stage(bool onset_known, Bwv bwv, double cps, double eye_movement, Seconds since_t1);

class Session {
 public:
  void step(const SensorFrame& f);

  std::optional<Seconds> t1() const { return t1_; }
  std::optional<Seconds> t2() const { return t2_; }
  std::optional<Seconds> t3() const { return t3_; }
  SleepStage stage() const { return stage_; }
  bool closed() const { return t3_.has_value() || (t1_ && !on_pillow_); }
  bool on_pillow() const { return on_pillow_; }

  // Stage segments tiling [t1, t3] (or [t1, last frame] while open).
  const std::vector<StageSegment>& segments() const { return segments_; }
  // Frames observed while on the pillow.
  const std::vector<SensorFrame>& frames() const { return frames_; }

  std::optional<double> latency_minutes() const;
  std::optional<double> slept_minutes() const;

 private:
  void enter(Seconds t, SleepStage s);

  std::optional<Seconds> last_t_;
  std::optional<Seconds> t1_;
  std::optional<Seconds> t2_;
  std::optional<Seconds> t3_;
  bool on_pillow_ = false;
  SleepStage stage_ = SleepStage::Awake;
  std::vector<StageSegment> segments_;
  std::vector<SensorFrame> frames_;
};

Session run_session(std::span<const SensorFrame> frames);

inline constexpr Seconds kWindowSeconds = 15 * 60;
inline constexpr Seconds kMinTrailingWindow = 5 * 60;

struct StressWindow {
  Seconds start = 0;
  Seconds end = 0;
  StressState detected = StressState::LowNormal;
  std::size_t frame_count = 0;
  SleepSample mean;
  bool carried = false;  // no frames: state taken from the neighbouring window
};

using Classifier = std::function<StressState(const SleepSample&)>;

Classifier crisp_classifier(const RangeTable& table = RangeTable::standard());

// Windows over [t2, t3]. A trailing remainder shorter than a third of the
// window (kMinTrailingWindow at the default length) extends the previous
// window. Throws std::logic_error if t2 or t3 is unset.
std::vector<StressWindow> detect_windows(const Session& s, const Classifier& classify,
                                         Seconds window = kWindowSeconds);

enum class Outlook : std::uint8_t { LowNormal, MediumLow, MediumHigh, Indeterminate };

std::string_view outlook_name(Outlook o);  // "L/N", "ML", "MH", "Indeterminate"

struct NextDayPrediction {
  Outlook sp = Outlook::Indeterminate;
  double latency_minutes = 0;
  double slept_minutes = 0;
  std::string advisory;
};

NextDayPrediction predict_next_day(std::span<const StressState> windows, double latency_minutes,
                                   double slept_minutes = 0);
NextDayPrediction predict_next_day(std::span<const StressWindow> windows, double latency_minutes);

enum class Phase : std::uint8_t { DuringSleep, NextDay };

struct ActionRecord {
  Phase phase = Phase::DuringSleep;
  std::string action;
  std::string trigger;
  std::optional<std::size_t> window;

  friend bool operator==(const ActionRecord&, const ActionRecord&) = default;
};

struct ControlInput {
  bool on_pillow = false;
  double latency_minutes = 0;
  std::vector<StressState> detected;
  std::optional<NextDayPrediction> prediction;
};

std::vector<ActionRecord> control_actions(const ControlInput& in);

std::string action_line(const ActionRecord& a);  // one JSON object, no newline

inline constexpr std::string_view kReplayCsvHeader =
    "timestamp_s,pressure,bwv,cps,hours_slept,snoring_db,respiration_bpm,heart_bpm,blood_oxygen_pct,eye_movement,"
    "limb_movement,body_temp_f";

std::string frames_to_csv(std::span<const SensorFrame> frames);
std::vector<SensorFrame> frames_from_csv(std::string_view text);  // throws CsvError
std::vector<SensorFrame> load_replay(const std::filesystem::path& path);
void write_replay(std::span<const SensorFrame> frames, const std::filesystem::path& path);

struct NightPlan {
  Seconds step = 60;
  Seconds latency = 32 * 60;
  Seconds sleep = 8 * 3600;
  StressState state = StressState::LowNormal;
  bool wake_alert = true;
};

// Scripted night: awake on the pillow, onset after `latency`, 90-minute
// light/deep/light/REM cycles, then a pressure-release wake frame.
std::vector<SensorFrame> synth_night(const NightPlan& plan, std::uint64_t seed,
                                     const RangeTable& table = RangeTable::standard());

}  // namespace sleepguard::session
