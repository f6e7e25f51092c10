#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

#include "sleepguard/physio.hpp"

using namespace sleepguard;

namespace {

const RangeTable kTable = RangeTable::standard();

SleepSample low_row() { return {8, 45, 17, 52, 96, 70, 6, 97}; }

// The characterization table exactly as printed, one row per stress state;
// open rows carry only their finite bound.
struct PrintedRange {
  double a;
  double b;
};
constexpr PrintedRange kPrinted[4][8] = {
    {{7, 9}, {40, 50}, {16, 18}, {50, 55}, {97, 95}, {60, 80}, {4, 8}, {99, 96}},
    {{5, 7}, {60, 50}, {18, 20}, {55, 60}, {95, 92}, {80, 85}, {8, 10}, {96, 94}},
    {{5, 2}, {60, 80}, {20, 22}, {60, 65}, {92, 90}, {85, 95}, {10, 12}, {94, 92}},
    {{2, 0}, {80, 90}, {22, 25}, {65, 75}, {90, 88}, {95, 100}, {12, 17}, {92, 90}},
};
// High row: "<0", ">90", ">25", ">75", "<88", ">100", ">17", "<90".
constexpr double kPrintedHigh[8] = {0, 90, 25, 75, 88, 100, 17, 90};

}  // namespace

TEST(Validate, LowRowMidpointsAreValid) { EXPECT_TRUE(validate_sample(low_row()).empty()); }

TEST(Validate, ZeroOxygenIsViolation) {
  auto s = low_row();
  s.blood_oxygen = 0;
  auto v = validate_sample(s);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].field, Feature::BloodOxygen);
}

TEST(Validate, TwentyFiveHoursIsViolation) {
  auto s = low_row();
  s.hours_slept = 25;
  auto v = validate_sample(s);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].field, Feature::HoursSlept);
}

TEST(Validate, NonFiniteFieldsAreEnumerated) {
  auto s = low_row();
  s.snoring = NAN;
  s.body_temp = INFINITY;
  auto v = validate_sample(s);
  ASSERT_EQ(v.size(), 2u);
  EXPECT_EQ(v[0].field, Feature::Snoring);
  EXPECT_EQ(v[1].field, Feature::BodyTemp);
}

TEST(RangeTable, MatchesPrintedTableAfterNormalization) {
  ASSERT_TRUE(kTable.well_formed());
  for (int k = 0; k < 4; ++k) {
    for (std::size_t f = 0; f < kFeatureCount; ++f) {
      auto feature = kAllFeatures[f];
      auto iv = kTable.interval(feature, static_cast<StressState>(k));
      double lo = std::min(kPrinted[k][f].a, kPrinted[k][f].b);
      double hi = std::max(kPrinted[k][f].a, kPrinted[k][f].b);
      if (feature == Feature::HoursSlept && k == 3) lo = 0.5;  // High hours row takes [0, 0.5)
      EXPECT_EQ(iv.lo, lo) << feature_name(feature) << " level " << k;
      EXPECT_EQ(iv.hi, hi) << feature_name(feature) << " level " << k;
    }
  }
  for (std::size_t f = 0; f < kFeatureCount; ++f) {
    auto feature = kAllFeatures[f];
    auto iv = kTable.interval(feature, StressState::High);
    if (feature == Feature::HoursSlept) {
      EXPECT_EQ(iv.lo, 0.0);
      EXPECT_EQ(iv.hi, 0.5);
    } else if (kTable.ranges(feature).ascending) {
      EXPECT_EQ(iv.lo, kPrintedHigh[f]);
      EXPECT_TRUE(std::isinf(iv.hi));
    } else {
      EXPECT_EQ(iv.hi, kPrintedHigh[f]);
      EXPECT_TRUE(std::isinf(iv.lo));
    }
  }
}

TEST(ParameterLevel, TableExamples) {
  EXPECT_EQ(kTable.parameter_level(Feature::Snoring, 45), 0);
  EXPECT_EQ(kTable.parameter_level(Feature::Snoring, 95), 4);
  EXPECT_EQ(kTable.parameter_level(Feature::HeartRate, 55), 1);
}

TEST(ParameterLevel, HeartRateBoundaryByEnumeration) {
  // Membership oracle: the level whose printed half-open range holds 55.
  int hits = 0;
  int found = -1;
  for (int k = 0; k < 4; ++k) {
    double lo = std::min(kPrinted[k][3].a, kPrinted[k][3].b);
    double hi = std::max(kPrinted[k][3].a, kPrinted[k][3].b);
    if (55 >= lo && 55 < hi) {
      ++hits;
      found = k;
    }
  }
  ASSERT_EQ(hits, 1);
  EXPECT_EQ(kTable.parameter_level(Feature::HeartRate, 55), found);
}

TEST(ParameterLevel, SharedBoundaryResolvesToInclusiveLowerBound) {
  EXPECT_EQ(kTable.parameter_level(Feature::HoursSlept, 7), 0);
  EXPECT_EQ(kTable.parameter_level(Feature::HoursSlept, 5), 1);
  EXPECT_EQ(kTable.parameter_level(Feature::BloodOxygen, 95), 0);
  EXPECT_EQ(kTable.parameter_level(Feature::BodyTemp, 90), 3);
}

TEST(ParameterLevel, OutOfTableValuesClamp) {
  EXPECT_EQ(kTable.parameter_level(Feature::Snoring, 10), 0);
  EXPECT_EQ(kTable.parameter_level(Feature::HoursSlept, 12), 0);
  EXPECT_EQ(kTable.parameter_level(Feature::BloodOxygen, 99.5), 0);
  EXPECT_EQ(kTable.parameter_level(Feature::BloodOxygen, 60), 4);
  EXPECT_EQ(kTable.parameter_level(Feature::BodyTemp, 80), 4);
  EXPECT_THROW((void)kTable.parameter_level(Feature::Snoring, NAN), std::invalid_argument);
}

TEST(ParameterLevel, EveryInRangeValueHitsExactlyOneInterval) {
  std::mt19937_64 gen(11);
  for (auto f : kAllFeatures) {
    auto lo = kTable.sampling_interval(f, kTable.ranges(f).ascending ? StressState::LowNormal : StressState::High).lo;
    auto hi = kTable.sampling_interval(f, kTable.ranges(f).ascending ? StressState::High : StressState::LowNormal).hi;
    std::uniform_real_distribution<double> dist(lo, hi);
    for (int i = 0; i < 2000; ++i) {
      double v = dist(gen);
      int hits = 0;
      for (std::size_t k = 0; k < kLevelCount; ++k) hits += kTable.ranges(f).intervals[k].contains(v) ? 1 : 0;
      EXPECT_EQ(hits, 1) << feature_name(f) << " " << v;
    }
  }
}

TEST(ClassifyCrisp, LowAndHighRows) {
  EXPECT_EQ(classify_crisp(low_row(), kTable), StressState::LowNormal);
  SleepSample high{0.5, 95, 27, 80, 85, 105, 19, 88};
  EXPECT_EQ(classify_crisp(high, kTable), StressState::High);
}

TEST(ClassifyCrisp, EvenMedianTieBreaksHigh) {
  SleepSample s;
  for (std::size_t j = 0; j < kFeatureCount; ++j) {
    s[kAllFeatures[j]] = kTable.midpoint(kAllFeatures[j], j < 4 ? StressState::MediumLow : StressState::Medium);
  }
  EXPECT_EQ(classify_crisp(s, kTable), StressState::Medium);
}

TEST(ClassifyCrisp, MatchesMedianOracleOverEveryLevelVector) {
  // Every one of the 5^8 level vectors, built from class midpoints. Oracle:
  // the smallest level L with at least 5 of the 8 levels <= L.
  std::array<int, kFeatureCount> lv{};
  std::size_t mismatches = 0;
  for (int code = 0; code < 390625; ++code) {
    int c = code;
    SleepSample s;
    for (std::size_t j = 0; j < kFeatureCount; ++j) {
      lv[j] = c % 5;
      c /= 5;
      s[kAllFeatures[j]] = kTable.midpoint(kAllFeatures[j], static_cast<StressState>(lv[j]));
    }
    int oracle = 0;
    for (int L = 0; L < 5; ++L) {
      int at_or_below = static_cast<int>(std::count_if(lv.begin(), lv.end(), [&](int x) { return x <= L; }));
      if (at_or_below >= 5) {
        oracle = L;
        break;
      }
    }
    if (level_of(classify_crisp(s, kTable)) != oracle) ++mismatches;
  }
  EXPECT_EQ(mismatches, 0u);
}

TEST(ClassifyCrisp, MonotoneInEachFeature) {
  std::mt19937_64 gen(5);
  auto ds = synth_dataset(40, 99);
  for (const auto& row : ds.rows) {
    for (auto f : kAllFeatures) {
      auto s = row.sample;
      auto before = level_of(classify_crisp(s, kTable));
      std::uniform_real_distribution<double> bump(0.0, 15.0);
      double delta = bump(gen);
      bool ascending = kTable.ranges(f).ascending;
      s[f] += delta;
      if (f == Feature::HoursSlept) s[f] = std::min(s[f], 24.0);
      if (f == Feature::BloodOxygen) s[f] = std::min(s[f], 100.0);
      auto after = level_of(classify_crisp(s, kTable));
      if (ascending) {
        EXPECT_GE(after, before);
      } else {
        EXPECT_LE(after, before);
      }
    }
  }
}

TEST(Synth, SizesAndBalance) {
  auto ds = synth_dataset(3000, 7);
  EXPECT_EQ(ds.rows.size(), 15000u);
  EXPECT_EQ(ds.train().size(), 13000u);
  EXPECT_EQ(ds.test().size(), 2000u);
  std::array<int, kLevelCount> counts{};
  for (const auto& r : ds.rows) ++counts[static_cast<std::size_t>(r.label)];
  for (int c : counts) EXPECT_EQ(c, 3000);
}

TEST(Synth, DeterministicUnderSeed) {
  EXPECT_EQ(synth_dataset(1, 42), synth_dataset(1, 42));
  EXPECT_EQ(synth_dataset(50, 3), synth_dataset(50, 3));
  EXPECT_NE(synth_dataset(50, 3), synth_dataset(50, 4));
}

TEST(Synth, EveryRowReclassifiesToItsLabel) {
  auto ds = synth_dataset(3000, 1234);
  for (const auto& row : ds.rows) {
    ASSERT_TRUE(validate_sample(row.sample).empty());
    ASSERT_EQ(classify_crisp(row.sample, kTable), row.label);
  }
}

TEST(Synth, RejectsZeroPerClass) { EXPECT_THROW(synth_dataset(0, 1), std::invalid_argument); }

TEST(Csv, SingleRow) {
  std::string text = std::string(kDatasetCsvHeader) + "\n8,45,17,52,96,70,6,97,0\n";
  auto ds = dataset_from_csv(text);
  ASSERT_EQ(ds.rows.size(), 1u);
  EXPECT_EQ(ds.rows[0].sample, low_row());
  EXPECT_EQ(ds.rows[0].label, StressState::LowNormal);
}

TEST(Csv, FileRoundTripIsIdentity) {
  auto ds = synth_dataset(3000, 77);
  auto path = std::filesystem::temp_directory_path() / "sleepguard_physio_roundtrip.csv";
  write_csv(ds, path);
  auto back = load_csv(path);
  std::filesystem::remove(path);
  EXPECT_EQ(back, ds);
}

TEST(Csv, SevenColumnsIsParseErrorAtThatLine) {
  std::string text = std::string(kDatasetCsvHeader) + "\n8,45,17,52,96,70,6,97,0\n8,45,17,52,96,70,6\n";
  try {
    dataset_from_csv(text);
    FAIL() << "expected CsvError";
  } catch (const CsvError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
}

TEST(Csv, UnknownLabelAndBadNumber) {
  std::string head = std::string(kDatasetCsvHeader) + "\n";
  EXPECT_THROW(dataset_from_csv(head + "8,45,17,52,96,70,6,97,5\n"), CsvError);
  EXPECT_THROW(dataset_from_csv(head + "8,45,x,52,96,70,6,97,1\n"), CsvError);
  EXPECT_THROW(dataset_from_csv("a,b\n"), CsvError);
}
