#include "sleepguard/physio.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

namespace sleepguard {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::size_t idx(Feature f) { return static_cast<std::size_t>(f); }

// Uniform double in [0, 1) from the top 53 bits; identical on every platform,
// unlike std::uniform_real_distribution.
double unit_uniform(std::mt19937_64& gen) { return static_cast<double>(gen() >> 11) * 0x1.0p-53; }

}  // namespace

StressState state_from_level(int level) {
  if (level < 0 || level >= static_cast<int>(kLevelCount)) {
    throw std::out_of_range("stress level " + std::to_string(level) + " outside 0..4");
  }
  return static_cast<StressState>(level);
}

std::string_view state_name(StressState s) {
  switch (s) {
    case StressState::LowNormal: return "LowNormal";
    case StressState::MediumLow: return "MediumLow";
    case StressState::Medium: return "Medium";
    case StressState::MediumHigh: return "MediumHigh";
    case StressState::High: return "High";
  }
  return "?";
}

std::string_view state_short_name(StressState s) {
  switch (s) {
    case StressState::LowNormal: return "L/N";
    case StressState::MediumLow: return "ML";
    case StressState::Medium: return "M";
    case StressState::MediumHigh: return "MH";
    case StressState::High: return "H";
  }
  return "?";
}

std::string_view feature_name(Feature f) {
  switch (f) {
    case Feature::HoursSlept: return "hours_slept";
    case Feature::Snoring: return "snoring";
    case Feature::Respiration: return "respiration";
    case Feature::HeartRate: return "heart_rate";
    case Feature::BloodOxygen: return "blood_oxygen";
    case Feature::EyeMovement: return "eye_movement";
    case Feature::LimbMovement: return "limb_movement";
    case Feature::BodyTemp: return "body_temp";
  }
  return "?";
}

double SleepSample::operator[](Feature f) const { return to_array()[idx(f)]; }

double& SleepSample::operator[](Feature f) {
  switch (f) {
    case Feature::HoursSlept: return hours_slept;
    case Feature::Snoring: return snoring;
    case Feature::Respiration: return respiration;
    case Feature::HeartRate: return heart_rate;
    case Feature::BloodOxygen: return blood_oxygen;
    case Feature::EyeMovement: return eye_movement;
    case Feature::LimbMovement: return limb_movement;
    case Feature::BodyTemp: return body_temp;
  }
  throw std::out_of_range("unknown feature");
}

FeatureVector SleepSample::to_array() const {
  return {hours_slept, snoring, respiration, heart_rate, blood_oxygen, eye_movement, limb_movement, body_temp};
}

SleepSample SleepSample::from_array(const FeatureVector& v) {
  return SleepSample{v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7]};
}

std::vector<FieldViolation> validate_sample(const SleepSample& s) {
  std::vector<FieldViolation> out;
  for (auto f : kAllFeatures) {
    if (!std::isfinite(s[f])) out.push_back({f, "not a finite number"});
  }
  if (std::isfinite(s.hours_slept) && (s.hours_slept < 0 || s.hours_slept > 24)) {
    out.push_back({Feature::HoursSlept, "outside [0, 24]"});
  }
  if (std::isfinite(s.blood_oxygen) && (s.blood_oxygen <= 0 || s.blood_oxygen > 100)) {
    out.push_back({Feature::BloodOxygen, "outside (0, 100]"});
  }
  return out;
}

RangeTable RangeTable::standard() {
  RangeTable t;
  auto asc = [](double a, double b, double c, double d, double e) {
    return FeatureRanges{true, {{{a, b}, {b, c}, {c, d}, {d, e}, {e, kInf}}}};
  };
  // Descending rows list Low first, so the Low interval sits at the top of
  // the value axis.
  auto desc = [](double top, double a, double b, double c, double d, double bottom) {
    return FeatureRanges{false, {{{a, top}, {b, a}, {c, b}, {d, c}, {bottom, d}}}};
  };
  t.ranges_[idx(Feature::HoursSlept)] = desc(9, 7, 5, 2, 0.5, 0);
  t.ranges_[idx(Feature::Snoring)] = asc(40, 50, 60, 80, 90);
  t.ranges_[idx(Feature::Respiration)] = asc(16, 18, 20, 22, 25);
  t.ranges_[idx(Feature::HeartRate)] = asc(50, 55, 60, 65, 75);
  t.ranges_[idx(Feature::BloodOxygen)] = desc(97, 95, 92, 90, 88, -kInf);
  t.ranges_[idx(Feature::EyeMovement)] = asc(60, 80, 85, 95, 100);
  t.ranges_[idx(Feature::LimbMovement)] = asc(4, 8, 10, 12, 17);
  t.ranges_[idx(Feature::BodyTemp)] = desc(99, 96, 94, 92, 90, -kInf);
  return t;
}

int RangeTable::parameter_level(Feature f, double value) const {
  if (!std::isfinite(value)) throw std::invalid_argument("parameter value must be finite");
  const auto& r = ranges(f);
  for (std::size_t k = 0; k < kLevelCount; ++k) {
    if (r.intervals[k].contains(value)) return static_cast<int>(k);
  }
  if (r.ascending) return value < r.intervals[0].lo ? 0 : static_cast<int>(kLevelCount - 1);
  return value >= r.intervals[0].hi ? 0 : static_cast<int>(kLevelCount - 1);
}

Interval RangeTable::sampling_interval(Feature f, StressState s) const {
  Interval iv = interval(f, s);
  if (s != StressState::High) return iv;
  switch (f) {
    case Feature::Snoring: return {iv.lo, 120};
    case Feature::Respiration: return {iv.lo, 40};
    case Feature::HeartRate: return {iv.lo, 120};
    case Feature::BloodOxygen: return {70, iv.hi};
    case Feature::EyeMovement: return {iv.lo, 140};
    case Feature::LimbMovement: return {iv.lo, 30};
    case Feature::BodyTemp: return {85, iv.hi};
    case Feature::HoursSlept: return iv;
  }
  return iv;
}

double RangeTable::midpoint(Feature f, StressState s) const {
  auto iv = sampling_interval(f, s);
  return 0.5 * (iv.lo + iv.hi);
}

bool RangeTable::well_formed() const {
  for (const auto& r : ranges_) {
    for (std::size_t k = 0; k < kLevelCount; ++k) {
      if (!(r.intervals[k].lo < r.intervals[k].hi)) return false;
      if (k + 1 < kLevelCount) {
        const auto& next = r.intervals[k + 1];
        if (r.ascending ? next.lo != r.intervals[k].hi : next.hi != r.intervals[k].lo) return false;
      }
    }
  }
  return true;
}

std::array<int, kFeatureCount> feature_levels(const SleepSample& s, const RangeTable& table) {
  std::array<int, kFeatureCount> levels{};
  for (auto f : kAllFeatures) levels[idx(f)] = table.parameter_level(f, s[f]);
  return levels;
}

StressState classify_crisp(const SleepSample& s, const RangeTable& table) {
  auto levels = feature_levels(s, table);
  std::sort(levels.begin(), levels.end());
  // Even count: the two middle elements are [3] and [4]; the higher wins.
  return state_from_level(levels[kFeatureCount / 2]);
}

SleepSample class_midpoint_sample(StressState s, const RangeTable& table) {
  SleepSample out;
  for (auto f : kAllFeatures) out[f] = table.midpoint(f, s);
  return out;
}

LabeledDataset synth_dataset(std::size_t n_per_class, std::uint64_t seed, const RangeTable& table) {
  if (n_per_class == 0) throw std::invalid_argument("n_per_class must be >= 1");
  std::mt19937_64 gen(seed);
  LabeledDataset ds;
  ds.rows.reserve(n_per_class * kLevelCount);
  for (std::size_t k = 0; k < kLevelCount; ++k) {
    auto state = static_cast<StressState>(k);
    for (std::size_t i = 0; i < n_per_class; ++i) {
      SleepSample s;
      for (auto f : kAllFeatures) {
        auto iv = table.sampling_interval(f, state);
        double v = iv.lo + (iv.hi - iv.lo) * unit_uniform(gen);
        // Rounding can land exactly on the exclusive end.
        if (v >= iv.hi) v = std::nextafter(iv.hi, iv.lo);
        s[f] = v;
      }
      ds.rows.push_back({s, state});
    }
  }
  for (std::size_t i = ds.rows.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(gen() % i);
    std::swap(ds.rows[i - 1], ds.rows[j]);
  }
  ds.train_size = LabeledDataset::default_train_size(ds.rows.size());
  return ds;
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string dataset_to_csv(const LabeledDataset& ds) {
  std::string out(kDatasetCsvHeader);
  out.push_back('\n');
  for (const auto& row : ds.rows) {
    for (double v : row.sample.to_array()) {
      out += format_double(v);
      out.push_back(',');
    }
    out += std::to_string(level_of(row.label));
    out.push_back('\n');
  }
  return out;
}

LabeledDataset dataset_from_csv(std::string_view text) {
  LabeledDataset ds;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  bool saw_header = false;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    auto line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() : nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!saw_header) {
      if (line != kDatasetCsvHeader) throw CsvError(line_no, "unexpected header");
      saw_header = true;
      continue;
    }
    if (line.empty()) continue;

    std::vector<std::string_view> cols;
    std::size_t start = 0;
    while (true) {
      auto comma = line.find(',', start);
      cols.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (cols.size() != kFeatureCount + 1) {
      throw CsvError(line_no, "expected " + std::to_string(kFeatureCount + 1) + " columns, got " +
                                  std::to_string(cols.size()));
    }
    FeatureVector values{};
    for (std::size_t i = 0; i < kFeatureCount; ++i) {
      auto c = cols[i];
      auto res = std::from_chars(c.data(), c.data() + c.size(), values[i]);
      if (res.ec != std::errc{} || res.ptr != c.data() + c.size()) {
        throw CsvError(line_no, "malformed number '" + std::string(c) + "'");
      }
    }
    int label = -1;
    auto lc = cols[kFeatureCount];
    auto res = std::from_chars(lc.data(), lc.data() + lc.size(), label);
    if (res.ec != std::errc{} || res.ptr != lc.data() + lc.size() || label < 0 ||
        label >= static_cast<int>(kLevelCount)) {
      throw CsvError(line_no, "unknown stress label '" + std::string(lc) + "'");
    }
    ds.rows.push_back({SleepSample::from_array(values), static_cast<StressState>(label)});
  }
  if (!saw_header) throw CsvError(1, "missing header");
  ds.train_size = LabeledDataset::default_train_size(ds.rows.size());
  return ds;
}

void write_csv(const LabeledDataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << dataset_to_csv(ds);
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

LabeledDataset load_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return dataset_from_csv(ss.str());
}

}  // namespace sleepguard
