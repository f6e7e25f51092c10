#include "sleepguard/session.hpp"

#include <charconv>
#include <fstream>
#include <random>
#include <sstream>

#include "json.hpp"

namespace sleepguard::session {

namespace {

constexpr Seconds kDriftAfter = 30 * 60;

bool drifting_band(double cps) { return cps > 12 && cps < 14; }

double parse_number(std::string_view field, std::size_t line) {
  double v = 0;
  auto res = std::from_chars(field.data(), field.data() + field.size(), v);
  if (res.ec != std::errc() || res.ptr != field.data() + field.size()) {
    throw CsvError(line, "not a number: '" + std::string(field) + "'");
  }
  return v;
}

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto comma = line.find(',', start);
    out.push_back(line.substr(start, comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace

std::string_view stage_name(SleepStage s) {
  switch (s) {
    case SleepStage::Awake: return "Awake";
    case SleepStage::Drifting: return "Drifting";
    case SleepStage::LightSleep: return "LightSleep";
    case SleepStage::DeepSleep: return "DeepSleep";
    case SleepStage::REM: return "REM";
    case SleepStage::WokeAlert: return "WokeAlert";
    case SleepStage::WokeRelaxed: return "WokeRelaxed";
  }
  return "?";
}

SleepStage classify_stage(bool onset_known, Bwv bwv, double cps, double eye_movement, Seconds since_t1) {
  if (bwv == Bwv::Low && since_t1 >= kDriftAfter && drifting_band(cps)) return SleepStage::Drifting;
  if (onset_known && bwv == Bwv::High && cps < 4) return SleepStage::DeepSleep;
  if (onset_known && bwv == Bwv::High && eye_movement != 0) return SleepStage::REM;
  return onset_known ? SleepStage::LightSleep : SleepStage::Awake;
}

void Session::enter(Seconds t, SleepStage s) {
  if (segments_.empty()) {
    segments_.push_back({t, t, s});
  } else if (segments_.back().stage == s) {
    segments_.back().end = t;
  } else {
    segments_.back().end = t;
    segments_.push_back({t, t, s});
  }
  stage_ = s;
}

void Session::step(const SensorFrame& f) {
  if (last_t_ && f.t <= *last_t_) {
    throw SequencingError("frame at t=" + std::to_string(f.t) + " does not follow t=" + std::to_string(*last_t_));
  }
  if (closed()) throw SequencingError("frame at t=" + std::to_string(f.t) + " after the session ended");
  last_t_ = f.t;

  if (!f.pressure) {
    if (!t1_) return;
    on_pillow_ = false;
    if (t2_) {
      t3_ = f.t;
      enter(f.t, f.bwv == Bwv::Low && f.cps > 13 ? SleepStage::WokeAlert : SleepStage::WokeRelaxed);
    } else {
      enter(f.t, stage_);
    }
    return;
  }

  if (!t1_) t1_ = f.t;
  on_pillow_ = true;
  frames_.push_back(f);
  auto s = classify_stage(t2_.has_value(), f.bwv, f.cps, f.sample.eye_movement, f.t - *t1_);
  if (s == SleepStage::Drifting && !t2_) t2_ = f.t;
  enter(f.t, s);
}

std::optional<double> Session::latency_minutes() const {
  if (!t1_ || !t2_) return std::nullopt;
  return static_cast<double>(*t2_ - *t1_) / 60.0;
}

std::optional<double> Session::slept_minutes() const {
  if (!t2_ || !t3_) return std::nullopt;
  return static_cast<double>(*t3_ - *t2_) / 60.0;
}

Session run_session(std::span<const SensorFrame> frames) {
  Session s;
  for (const auto& f : frames) s.step(f);
  return s;
}

Classifier crisp_classifier(const RangeTable& table) {
  return [table](const SleepSample& s) { return classify_crisp(s, table); };
}

std::vector<StressWindow> detect_windows(const Session& s, const Classifier& classify, Seconds window) {
  if (!s.t2() || !s.t3()) throw std::logic_error("window detection needs a completed sleep (t2 and t3)");
  if (window <= 0) throw std::invalid_argument("window length must be positive");
  const Seconds min_trailing = window * kMinTrailingWindow / kWindowSeconds;
  const Seconds t2 = *s.t2();
  const Seconds t3 = *s.t3();
  const Seconds span = t3 - t2;

  std::vector<StressWindow> windows;
  for (Seconds start = t2; start < t3; start += window) {
    windows.push_back({start, std::min(start + window, t3), StressState::LowNormal, 0, {}, false});
  }
  if (windows.size() > 1 && span % window != 0 && span % window < min_trailing) {
    windows.pop_back();
    windows.back().end = t3;
  }

  std::vector<std::array<double, kFeatureCount>> sums(windows.size());
  for (const auto& f : s.frames()) {
    if (f.t < t2 || f.t >= t3) continue;
    std::size_t k = std::min(static_cast<std::size_t>((f.t - t2) / window), windows.size() - 1);
    auto v = f.sample.to_array();
    for (std::size_t i = 0; i < kFeatureCount; ++i) sums[k][i] += v[i];
    ++windows[k].frame_count;
  }

  std::optional<StressState> first_seen;
  for (std::size_t k = 0; k < windows.size(); ++k) {
    auto& w = windows[k];
    if (w.frame_count == 0) continue;
    std::array<double, kFeatureCount> mean{};
    for (std::size_t i = 0; i < kFeatureCount; ++i) mean[i] = sums[k][i] / static_cast<double>(w.frame_count);
    w.mean = SleepSample::from_array(mean);
    w.detected = classify(w.mean);
    if (!first_seen) first_seen = w.detected;
  }
  if (!first_seen) throw std::logic_error("no readings between sleep onset and wake");

  std::optional<StressState> previous;
  for (auto& w : windows) {
    if (w.frame_count == 0) {
      w.carried = true;
      w.detected = previous ? *previous : *first_seen;
    }
    previous = w.detected;
  }
  return windows;
}

std::string_view outlook_name(Outlook o) {
  switch (o) {
    case Outlook::LowNormal: return "L/N";
    case Outlook::MediumLow: return "ML";
    case Outlook::MediumHigh: return "MH";
    case Outlook::Indeterminate: return "Indeterminate";
  }
  return "?";
}

NextDayPrediction predict_next_day(std::span<const StressState> windows, double latency_minutes,
                                   double slept_minutes) {
  if (windows.empty()) throw std::invalid_argument("prediction needs at least one window");
  if (!(latency_minutes >= 0)) throw std::invalid_argument("latency must be non-negative");

  std::size_t n = windows.size();
  std::size_t elevated = 0, moderate = 0, low = 0;
  for (auto s : windows) {
    if (s == StressState::Medium || s == StressState::High || s == StressState::MediumHigh) ++elevated;
    if (s == StressState::Medium || s == StressState::LowNormal || s == StressState::MediumLow) ++moderate;
    if (s == StressState::LowNormal) ++low;
  }
  const double L = latency_minutes;
  NextDayPrediction p;
  p.latency_minutes = L;
  p.slept_minutes = slept_minutes;
  if (5 * elevated >= 4 * n && L > 35 && L < 45) {
    p.sp = Outlook::MediumHigh;
    p.advisory = "mood-swings-irritability-sleeplessness-fatigue";
  } else if (5 * moderate >= 3 * n && L > 20 && L < 35) {
    p.sp = Outlook::MediumLow;
    p.advisory = "some-mood-swings-tiredness";
  } else if (5 * low >= 4 * n && L > 10 && L < 20) {
    p.sp = Outlook::LowNormal;
    p.advisory = "active-and-happy";
  } else {
    p.sp = Outlook::Indeterminate;
    p.advisory = "no-rule-matched";
  }
  return p;
}

NextDayPrediction predict_next_day(std::span<const StressWindow> windows, double latency_minutes) {
  std::vector<StressState> states;
  states.reserve(windows.size());
  for (const auto& w : windows) states.push_back(w.detected);
  double slept = windows.empty() ? 0 : static_cast<double>(windows.back().end - windows.front().start) / 60.0;
  return predict_next_day(states, latency_minutes, slept);
}

std::vector<ActionRecord> control_actions(const ControlInput& in) {
  std::vector<ActionRecord> out;
  if (in.on_pillow) {
    out.push_back({Phase::DuringSleep, "regulate-temperature", "on-pillow", std::nullopt});
    if (in.latency_minutes >= 15) out.push_back({Phase::DuringSleep, "dim-lights", "latency-15min", std::nullopt});
    out.push_back({Phase::DuringSleep, "play-audio", "on-pillow", std::nullopt});
  }
  for (std::size_t k = 1; k < in.detected.size(); ++k) {
    bool run_of_two = in.detected[k] == StressState::High && in.detected[k - 1] == StressState::High;
    bool run_start = k < 2 || in.detected[k - 2] != StressState::High;
    if (run_of_two && run_start) {
      out.push_back({Phase::DuringSleep, "regulate-temperature", "high-twice", k});
      out.push_back({Phase::DuringSleep, "play-audio", "high-twice", k});
    }
  }
  if (in.prediction) {
    std::string trigger = "sp=" + std::string(outlook_name(in.prediction->sp));
    out.push_back({Phase::NextDay, "hydrate", trigger, std::nullopt});
    if (in.prediction->sp == Outlook::MediumLow || in.prediction->sp == Outlook::MediumHigh) {
      out.push_back({Phase::NextDay, "mood-food", trigger, std::nullopt});
    }
    if (in.prediction->sp == Outlook::MediumHigh) {
      out.push_back({Phase::NextDay, "walk", trigger, std::nullopt});
      out.push_back({Phase::NextDay, "photo-notification", trigger, std::nullopt});
    }
  }
  return out;
}

std::string action_line(const ActionRecord& a) {
  nlohmann::ordered_json j;
  j["phase"] = a.phase == Phase::DuringSleep ? "during-sleep" : "next-day";
  j["action"] = a.action;
  j["trigger"] = a.trigger;
  if (a.window) j["window"] = *a.window;
  return j.dump();
}

std::string frames_to_csv(std::span<const SensorFrame> frames) {
  std::string out(kReplayCsvHeader);
  out.push_back('\n');
  for (const auto& f : frames) {
    out += std::to_string(f.t);
    out += f.pressure ? ",1," : ",0,";
    out += f.bwv == Bwv::Low ? "low," : "high,";
    out += format_double(f.cps);
    for (double v : f.sample.to_array()) {
      out.push_back(',');
      out += format_double(v);
    }
    out.push_back('\n');
  }
  return out;
}

std::vector<SensorFrame> frames_from_csv(std::string_view text) {
  std::vector<SensorFrame> frames;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  bool header_seen = false;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    auto line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() : nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    if (!header_seen) {
      if (line != kReplayCsvHeader) throw CsvError(line_no, "unexpected header");
      header_seen = true;
      continue;
    }
    auto fields = split(line);
    if (fields.size() != 12) throw CsvError(line_no, "expected 12 fields, got " + std::to_string(fields.size()));
    SensorFrame f;
    double t = parse_number(fields[0], line_no);
    if (t != static_cast<double>(static_cast<Seconds>(t))) throw CsvError(line_no, "timestamp must be whole seconds");
    f.t = static_cast<Seconds>(t);
    if (fields[1] == "1") {
      f.pressure = true;
    } else if (fields[1] != "0") {
      throw CsvError(line_no, "pressure must be 0 or 1");
    }
    if (fields[2] == "high") {
      f.bwv = Bwv::High;
    } else if (fields[2] != "low") {
      throw CsvError(line_no, "bwv must be low or high");
    }
    f.cps = parse_number(fields[3], line_no);
    std::array<double, kFeatureCount> v{};
    for (std::size_t i = 0; i < kFeatureCount; ++i) v[i] = parse_number(fields[4 + i], line_no);
    f.sample = SleepSample::from_array(v);
    frames.push_back(f);
  }
  if (!header_seen) throw CsvError(1, "missing header");
  return frames;
}

std::vector<SensorFrame> load_replay(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return frames_from_csv(ss.str());
}

void write_replay(std::span<const SensorFrame> frames, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << frames_to_csv(frames);
}

std::vector<SensorFrame> synth_night(const NightPlan& plan, std::uint64_t seed, const RangeTable& table) {
  if (plan.step <= 0) throw std::invalid_argument("frame step must be positive");
  if (plan.latency < kDriftAfter) throw std::invalid_argument("onset cannot precede 30 minutes on the pillow");
  std::mt19937_64 gen(seed);
  auto draw = [&] {
    SleepSample s;
    for (auto f : kAllFeatures) {
      auto iv = table.sampling_interval(f, plan.state);
      s[f] = std::uniform_real_distribution<double>(iv.lo, iv.hi)(gen);
    }
    return s;
  };

  std::vector<SensorFrame> frames;
  const Seconds onset = plan.latency;
  const Seconds wake = onset + plan.sleep;
  for (Seconds t = 0; t < onset; t += plan.step) frames.push_back({t, true, Bwv::Low, 20.0, draw()});
  frames.push_back({onset, true, Bwv::Low, 13.0, draw()});
  for (Seconds t = onset + plan.step; t < wake; t += plan.step) {
    Seconds m = ((t - onset) / 60) % 90;
    SensorFrame f{t, true, Bwv::Low, 8.0, draw()};
    if (m >= 40 && m < 60) {
      f.bwv = Bwv::High;
      f.cps = 2.0;
    } else if (m >= 70) {
      f.bwv = Bwv::High;
      f.cps = 6.0;
    }
    frames.push_back(f);
  }
  frames.push_back({wake, false, Bwv::Low, plan.wake_alert ? 20.0 : 9.0, draw()});
  return frames;
}

}  // namespace sleepguard::session
