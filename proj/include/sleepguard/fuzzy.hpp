#pragma once

// Mamdani inference over the 8 physiological features.
//
// Input terms: for every feature, five terms (one per stress level) that peak
// at the level's interval midpoint and cross at 0.5 on each interval boundary.
// Extreme levels are shoulders. Only adjacent terms overlap, and adjacent
// grades sum to 1.
//
// Rules: one rule per multiset of feature levels (the order of features does
// not matter, only how many features sit at each level). A rule fires with
// the max over level assignments that realize its multiset of the min grade
// (min AND, max OR). Its consequent is the rounded-half-up mean level.
//
// Output: five triangles on [0,5], level k spanning [k, k+1] with its peak
// at k + 0.5; aggregation by max, defuzzification by centroid on a fixed
// 1001-point grid.

#include <array>
#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

#include "sleepguard/physio.hpp"

namespace sleepguard::fuzzy {

// Number of size-`i` multisets over `p` kinds, C(p+i-1, i), in exact
// integer arithmetic. Throws std::overflow_error past 64 bits and
// std::invalid_argument for p or i below 1.
std::uint64_t rule_count(std::uint64_t p, std::uint64_t i);

// Piecewise-linear membership on one feature axis: (value, grade) knots,
// constant beyond the first and last knot.
struct MembershipFunction {
  std::vector<std::pair<double, double>> knots;
  double operator()(double x) const;
};

using Grades = std::array<double, kLevelCount>;
using FuzzifiedSample = std::array<Grades, kFeatureCount>;

struct FuzzyRule {
  std::array<int, kFeatureCount> levels{};  // non-decreasing
  int consequent = 0;
};

class FuzzyRuleBase {
 public:
  const std::vector<FuzzyRule>& rules() const { return rules_; }
  std::size_t size() const { return rules_.size(); }
  // Index of the rule whose antecedent multiset has `counts[k]` features at
  // level k.
  std::size_t rule_index(const std::array<int, kLevelCount>& counts) const;

  const MembershipFunction& term(Feature f, int level) const {
    return terms_[static_cast<std::size_t>(f)][static_cast<std::size_t>(level)];
  }

 private:
  friend FuzzyRuleBase build_rule_base(const RangeTable& table);
  std::vector<FuzzyRule> rules_;
  std::vector<std::int32_t> index_by_key_;
  std::array<std::array<MembershipFunction, kLevelCount>, kFeatureCount> terms_;
};

FuzzyRuleBase build_rule_base(const RangeTable& table = RangeTable::standard());

FuzzifiedSample fuzzify(const SleepSample& s, const FuzzyRuleBase& rb);

class InferenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::size_t kDefuzzGridPoints = 1001;
inline constexpr double kOutputMax = 5.0;

// Grade of output term `level` at y.
double output_term(int level, double y);

// Per-consequent activation (max over rules with that consequent).
std::array<double, kLevelCount> activations(const SleepSample& s, const FuzzyRuleBase& rb);

// Crisp output in [0, 5].
double infer(const SleepSample& s, const FuzzyRuleBase& rb);

// (0,1] -> LowNormal, (1,2] -> MediumLow, ..., (4,5] -> High; 0 -> LowNormal.
// Throws std::domain_error outside [0, 5].
StressState label_from_output(double y);

struct SurfacePoint {
  double x;
  double y;
  double output;
};

// Output over a steps x steps grid spanning the two features' table ranges,
// all other features held at the `base` class midpoints.
std::vector<SurfacePoint> surface(Feature fx, Feature fy, StressState base, std::size_t steps,
                                  const FuzzyRuleBase& rb, const RangeTable& table = RangeTable::standard());

// [min, max] plotting span of a feature: Low side to the High sampling cap.
Interval feature_span(Feature f, const RangeTable& table);

}  // namespace sleepguard::fuzzy
