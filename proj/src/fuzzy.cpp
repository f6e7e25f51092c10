#include "sleepguard/fuzzy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace sleepguard::fuzzy {

namespace {

constexpr std::size_t kKeyBase = kFeatureCount + 1;

std::size_t counts_key(const std::array<int, kLevelCount>& counts) {
  std::size_t key = 0;
  for (std::size_t k = kLevelCount; k-- > 0;) key = key * kKeyBase + static_cast<std::size_t>(counts[k]);
  return key;
}

std::size_t key_space() {
  std::size_t n = 1;
  for (std::size_t k = 0; k < kLevelCount; ++k) n *= kKeyBase;
  return n;
}

// Terms for one feature. Levels are laid out along the value axis (reversed
// for descending features); each term is 1 at its own centre, 0.5 at the
// shared boundaries and 0 at the neighbouring centres.
std::array<MembershipFunction, kLevelCount> build_terms(Feature f, const RangeTable& table) {
  const auto& r = table.ranges(f);
  std::array<int, kLevelCount> order{};
  for (std::size_t j = 0; j < kLevelCount; ++j) {
    order[j] = r.ascending ? static_cast<int>(j) : static_cast<int>(kLevelCount - 1 - j);
  }
  std::array<Interval, kLevelCount> iv{};
  for (std::size_t j = 0; j < kLevelCount; ++j) iv[j] = r.intervals[static_cast<std::size_t>(order[j])];

  std::array<double, kLevelCount - 1> boundary{};
  for (std::size_t j = 0; j + 1 < kLevelCount; ++j) boundary[j] = iv[j].hi;

  std::array<double, kLevelCount> centre{};
  for (std::size_t j = 0; j < kLevelCount; ++j) {
    if (std::isfinite(iv[j].lo) && std::isfinite(iv[j].hi)) centre[j] = 0.5 * (iv[j].lo + iv[j].hi);
  }
  // Open-ended extremes mirror the neighbouring centre across the boundary.
  if (!std::isfinite(iv.front().lo)) centre.front() = 2 * boundary.front() - centre[1];
  if (!std::isfinite(iv.back().hi)) centre.back() = 2 * boundary.back() - centre[kLevelCount - 2];

  std::array<MembershipFunction, kLevelCount> terms;
  for (std::size_t j = 0; j < kLevelCount; ++j) {
    MembershipFunction mf;
    if (j > 0) {
      mf.knots.push_back({centre[j - 1], 0.0});
      mf.knots.push_back({boundary[j - 1], 0.5});
    }
    mf.knots.push_back({centre[j], 1.0});
    if (j + 1 < kLevelCount) {
      mf.knots.push_back({boundary[j], 0.5});
      mf.knots.push_back({centre[j + 1], 0.0});
    }
    terms[static_cast<std::size_t>(order[j])] = std::move(mf);
  }
  return terms;
}

}  // namespace

std::uint64_t rule_count(std::uint64_t p, std::uint64_t i) {
  if (p < 1 || i < 1) throw std::invalid_argument("rule_count requires p >= 1 and i >= 1");
  std::uint64_t n = 0;
  if (__builtin_add_overflow(p, i - 1, &n)) throw std::overflow_error("rule_count: p + i - 1 overflows");
  std::uint64_t k = std::min(i, n - i);
  // result holds C(n - k + j, j) after step j, always an integer.
  std::uint64_t result = 1;
  for (std::uint64_t j = 1; j <= k; ++j) {
    std::uint64_t num = n - k + j;
    std::uint64_t den = j;
    std::uint64_t g = std::gcd(result, den);
    result /= g;
    den /= g;
    g = std::gcd(num, den);
    num /= g;
    den /= g;
    // den now divides the product exactly and shares no factor with result.
    std::uint64_t prod = 0;
    if (__builtin_mul_overflow(result, num, &prod)) throw std::overflow_error("rule_count: result exceeds 64 bits");
    result = prod / den;
  }
  return result;
}

double MembershipFunction::operator()(double x) const {
  if (knots.empty()) return 0.0;
  if (x <= knots.front().first) return knots.front().second;
  if (x >= knots.back().first) return knots.back().second;
  for (std::size_t i = 1; i < knots.size(); ++i) {
    const auto& [x1, g1] = knots[i];
    if (x <= x1) {
      const auto& [x0, g0] = knots[i - 1];
      return g0 + (g1 - g0) * (x - x0) / (x1 - x0);
    }
  }
  return knots.back().second;
}

std::size_t FuzzyRuleBase::rule_index(const std::array<int, kLevelCount>& counts) const {
  auto key = counts_key(counts);
  if (key >= index_by_key_.size() || index_by_key_[key] < 0) throw std::out_of_range("no rule for level counts");
  return static_cast<std::size_t>(index_by_key_[key]);
}

FuzzyRuleBase build_rule_base(const RangeTable& table) {
  FuzzyRuleBase rb;
  rb.index_by_key_.assign(key_space(), -1);

  std::array<int, kFeatureCount> levels{};
  // Non-decreasing sequences of length 8 over 0..4.
  auto emit = [&](auto&& self, std::size_t pos, int min_level) -> void {
    if (pos == kFeatureCount) {
      FuzzyRule rule;
      rule.levels = levels;
      int sum = std::accumulate(levels.begin(), levels.end(), 0);
      rule.consequent = (2 * sum + static_cast<int>(kFeatureCount)) / (2 * static_cast<int>(kFeatureCount));
      std::array<int, kLevelCount> counts{};
      for (int l : levels) ++counts[static_cast<std::size_t>(l)];
      rb.index_by_key_[counts_key(counts)] = static_cast<std::int32_t>(rb.rules_.size());
      rb.rules_.push_back(rule);
      return;
    }
    for (int l = min_level; l < static_cast<int>(kLevelCount); ++l) {
      levels[pos] = l;
      self(self, pos + 1, l);
    }
  };
  emit(emit, 0, 0);

  for (auto f : kAllFeatures) rb.terms_[static_cast<std::size_t>(f)] = build_terms(f, table);
  return rb;
}

FuzzifiedSample fuzzify(const SleepSample& s, const FuzzyRuleBase& rb) {
  FuzzifiedSample out{};
  for (auto f : kAllFeatures) {
    for (std::size_t k = 0; k < kLevelCount; ++k) {
      out[static_cast<std::size_t>(f)][k] = rb.term(f, static_cast<int>(k))(s[f]);
    }
  }
  return out;
}

double output_term(int level, double y) {
  double lo = level;
  double peak = level + 0.5;
  double hi = level + 1.0;
  if (y <= lo || y >= hi) return 0.0;
  return y <= peak ? (y - lo) / (peak - lo) : (hi - y) / (hi - peak);
}

std::array<double, kLevelCount> activations(const SleepSample& s, const FuzzyRuleBase& rb) {
  auto grades = fuzzify(s, rb);

  // Each feature has at most two positive grades, so at most 2^8 level
  // assignments carry any strength.
  std::array<std::array<int, 2>, kFeatureCount> active{};
  std::array<std::size_t, kFeatureCount> n_active{};
  for (std::size_t j = 0; j < kFeatureCount; ++j) {
    for (std::size_t k = 0; k < kLevelCount; ++k) {
      if (grades[j][k] > 0) {
        if (n_active[j] == 2) throw InferenceError("more than two active terms on one feature");
        active[j][n_active[j]++] = static_cast<int>(k);
      }
    }
    if (n_active[j] == 0) throw InferenceError("no active term on feature " + std::to_string(j));
  }

  std::vector<double> rule_strength(rb.size(), 0.0);
  std::array<int, kLevelCount> counts{};
  auto walk = [&](auto&& self, std::size_t j, double strength) -> void {
    if (j == kFeatureCount) {
      auto r = rb.rule_index(counts);
      rule_strength[r] = std::max(rule_strength[r], strength);
      return;
    }
    for (std::size_t a = 0; a < n_active[j]; ++a) {
      int level = active[j][a];
      ++counts[static_cast<std::size_t>(level)];
      self(self, j + 1, std::min(strength, grades[j][static_cast<std::size_t>(level)]));
      --counts[static_cast<std::size_t>(level)];
    }
  };
  walk(walk, 0, 1.0);

  std::array<double, kLevelCount> out{};
  for (std::size_t r = 0; r < rb.size(); ++r) {
    auto c = static_cast<std::size_t>(rb.rules()[r].consequent);
    out[c] = std::max(out[c], rule_strength[r]);
  }
  return out;
}

double infer(const SleepSample& s, const FuzzyRuleBase& rb) {
  auto act = activations(s, rb);
  double num = 0;
  double den = 0;
  for (std::size_t i = 0; i < kDefuzzGridPoints; ++i) {
    double y = kOutputMax * static_cast<double>(i) / static_cast<double>(kDefuzzGridPoints - 1);
    double mu = 0;
    for (std::size_t k = 0; k < kLevelCount; ++k) {
      mu = std::max(mu, std::min(act[k], output_term(static_cast<int>(k), y)));
    }
    num += y * mu;
    den += mu;
  }
  if (den <= 0) throw InferenceError("no rule fired");
  return num / den;
}

StressState label_from_output(double y) {
  if (!(y >= 0.0 && y <= kOutputMax)) throw std::domain_error("fuzzy output outside [0, 5]");
  if (y <= 1.0) return StressState::LowNormal;
  return state_from_level(static_cast<int>(std::ceil(y)) - 1);
}

Interval feature_span(Feature f, const RangeTable& table) {
  const auto& r = table.ranges(f);
  auto low = table.sampling_interval(f, StressState::LowNormal);
  auto high = table.sampling_interval(f, StressState::High);
  return r.ascending ? Interval{low.lo, high.hi} : Interval{high.lo, low.hi};
}

std::vector<SurfacePoint> surface(Feature fx, Feature fy, StressState base, std::size_t steps,
                                  const FuzzyRuleBase& rb, const RangeTable& table) {
  if (steps < 2) throw std::invalid_argument("surface needs at least 2 steps per axis");
  auto sx = feature_span(fx, table);
  auto sy = feature_span(fy, table);
  SleepSample s = class_midpoint_sample(base, table);
  std::vector<SurfacePoint> out;
  out.reserve(steps * steps);
  for (std::size_t i = 0; i < steps; ++i) {
    double x = sx.lo + (sx.hi - sx.lo) * static_cast<double>(i) / static_cast<double>(steps - 1);
    for (std::size_t j = 0; j < steps; ++j) {
      double y = sy.lo + (sy.hi - sy.lo) * static_cast<double>(j) / static_cast<double>(steps - 1);
      s[fx] = x;
      s[fy] = y;
      out.push_back({x, y, infer(s, rb)});
    }
  }
  return out;
}

}  // namespace sleepguard::fuzzy
