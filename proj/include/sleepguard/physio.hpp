#pragma once

// Physiological data model: the 8-feature sleep observation, the 5-level
// stress scale, the characterization table that maps each feature onto that
// scale, and the table-driven synthetic dataset.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace sleepguard {

inline constexpr std::size_t kFeatureCount = 8;
inline constexpr std::size_t kLevelCount = 5;

enum class StressState : std::uint8_t { LowNormal = 0, MediumLow = 1, Medium = 2, MediumHigh = 3, High = 4 };

constexpr int level_of(StressState s) { return static_cast<int>(s); }
StressState state_from_level(int level);  // throws std::out_of_range outside 0..4
std::string_view state_name(StressState s);
std::string_view state_short_name(StressState s);  // "L/N", "ML", "M", "MH", "H"

enum class Feature : std::uint8_t {
  HoursSlept,
  Snoring,
  Respiration,
  HeartRate,
  BloodOxygen,
  EyeMovement,
  LimbMovement,
  BodyTemp,
};

std::string_view feature_name(Feature f);
inline constexpr std::array<Feature, kFeatureCount> kAllFeatures = {
    Feature::HoursSlept,  Feature::Snoring,     Feature::Respiration,  Feature::HeartRate,
    Feature::BloodOxygen, Feature::EyeMovement, Feature::LimbMovement, Feature::BodyTemp,
};

using FeatureVector = std::array<double, kFeatureCount>;

struct SleepSample {
  double hours_slept = 0;    // hours
  double snoring = 0;        // dB
  double respiration = 0;    // breaths/min
  double heart_rate = 0;     // beats/min
  double blood_oxygen = 0;   // percent
  double eye_movement = 0;   // events/min
  double limb_movement = 0;  // events/h
  double body_temp = 0;      // degrees F

  double operator[](Feature f) const;
  double& operator[](Feature f);

  FeatureVector to_array() const;
  static SleepSample from_array(const FeatureVector& v);

  friend bool operator==(const SleepSample&, const SleepSample&) = default;
};

struct FieldViolation {
  Feature field;
  std::string reason;
};

// Empty result means the sample is valid.
std::vector<FieldViolation> validate_sample(const SleepSample& s);

// Half-open interval [lo, hi); either end may be infinite for the open rows.
struct Interval {
  double lo;
  double hi;
  bool contains(double v) const { return v >= lo && v < hi; }
  friend bool operator==(const Interval&, const Interval&) = default;
};

// Per-feature stress intervals. `intervals[k]` is the interval of level k.
// Ascending features grow toward High (snoring, heart rate, ...); descending
// features shrink toward High (hours slept, blood oxygen, body temperature).
struct FeatureRanges {
  bool ascending = true;
  std::array<Interval, kLevelCount> intervals{};
};

class RangeTable {
 public:
  // The stress characterization table with descending-written ranges
  // normalized, plus the High hours row fixed to [0, 0.5).
  static RangeTable standard();

  const FeatureRanges& ranges(Feature f) const { return ranges_[static_cast<std::size_t>(f)]; }
  const Interval& interval(Feature f, StressState s) const {
    return ranges(f).intervals[static_cast<std::size_t>(s)];
  }

  // Level whose interval holds `value`; out-of-table values clamp to 0 or 4.
  int parameter_level(Feature f, double value) const;

  // Finite bounds used when sampling the open-ended rows.
  Interval sampling_interval(Feature f, StressState s) const;
  // Midpoint of the (capped) interval; the representative value of a class.
  double midpoint(Feature f, StressState s) const;

  // Checks contiguity and monotone ordering of every feature's intervals.
  bool well_formed() const;

 private:
  std::array<FeatureRanges, kFeatureCount> ranges_{};
};

// The 8 per-feature levels, in feature order.
std::array<int, kFeatureCount> feature_levels(const SleepSample& s, const RangeTable& table);

// Upper median of the 8 per-feature levels (ties between two distinct middle
// levels resolve to the higher one).
StressState classify_crisp(const SleepSample& s, const RangeTable& table);

// Sample built from the midpoints of one class's intervals.
SleepSample class_midpoint_sample(StressState s, const RangeTable& table);

struct LabeledRow {
  SleepSample sample;
  StressState label;
  friend bool operator==(const LabeledRow&, const LabeledRow&) = default;
};

struct LabeledDataset {
  std::vector<LabeledRow> rows;
  std::size_t train_size = 0;

  std::span<const LabeledRow> train() const { return std::span(rows).first(train_size); }
  std::span<const LabeledRow> test() const { return std::span(rows).subspan(train_size); }

  // 13/15 of the rows train, the rest test (15,000 -> 13,000 + 2,000).
  static std::size_t default_train_size(std::size_t total) { return total * 13 / 15; }

  friend bool operator==(const LabeledDataset&, const LabeledDataset&) = default;
};

// Deterministic under `seed`. Every feature of a class-k row is drawn
// uniformly inside that feature's level-k sampling interval, then the rows are
// shuffled and split with default_train_size.
LabeledDataset synth_dataset(std::size_t n_per_class, std::uint64_t seed,
                             const RangeTable& table = RangeTable::standard());

class CsvError : public std::runtime_error {
 public:
  CsvError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

inline constexpr std::string_view kDatasetCsvHeader =
    "hours_slept,snoring_db,respiration_bpm,heart_bpm,blood_oxygen_pct,eye_movement,limb_movement,body_temp_f,"
    "stress_level";

std::string format_double(double v);  // shortest round-trip representation

void write_csv(const LabeledDataset& ds, const std::filesystem::path& path);
LabeledDataset load_csv(const std::filesystem::path& path);
std::string dataset_to_csv(const LabeledDataset& ds);
LabeledDataset dataset_from_csv(std::string_view text);

}  // namespace sleepguard
