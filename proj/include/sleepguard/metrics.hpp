#pragma once

// Multi-class evaluation: confusion matrix, one-vs-rest counts and the
// precision / recall / accuracy / F1 family, macro-averaged over classes.

#include <array>
#include <cstddef>
#include <span>
#include <string>

#include "sleepguard/physio.hpp"

namespace sleepguard::metrics {

struct ClassCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::size_t tn = 0;
};

struct ClassScores {
  ClassCounts counts;
  double precision = 0;  // TP / (TP + FP)
  double recall = 0;     // TP / (TP + FN)
  double accuracy = 0;   // (TP + TN) / (TP + TN + FP + FN), one-vs-rest
  double f1 = 0;         // 2PR / (P + R)
  // Class absent from both truth and predictions; precision and recall are
  // reported as 1.
  bool absent = false;
};

using ConfusionMatrix = std::array<std::array<std::size_t, kLevelCount>, kLevelCount>;  // [truth][predicted]

struct EvalReport {
  ConfusionMatrix confusion{};
  std::array<ClassScores, kLevelCount> classes{};
  std::size_t total = 0;
  double accuracy = 0;  // trace / total
  double macro_precision = 0;
  double macro_recall = 0;
  double macro_f1 = 0;
};

// Precision with the empty-denominator convention: 0 when the class was
// never predicted.
double precision(std::size_t tp, std::size_t fp);
double recall(std::size_t tp, std::size_t fn);
double f1_score(double precision, double recall);

// `truth` and `predicted` hold levels 0..4 and have equal length.
EvalReport evaluate_predictions(std::span<const int> truth, std::span<const int> predicted);

std::string format_report(const EvalReport& r);

}  // namespace sleepguard::metrics
