#include "sleepguard/metrics.hpp"

#include <cstdio>
#include <stdexcept>

namespace sleepguard::metrics {

double precision(std::size_t tp, std::size_t fp) {
  return tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
}

double recall(std::size_t tp, std::size_t fn) {
  return tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
}

double f1_score(double p, double r) { return p + r == 0 ? 0.0 : 2.0 * p * r / (p + r); }

EvalReport evaluate_predictions(std::span<const int> truth, std::span<const int> predicted) {
  if (truth.size() != predicted.size()) throw std::invalid_argument("truth and predictions differ in length");
  if (truth.empty()) throw std::invalid_argument("cannot evaluate an empty split");
  EvalReport r;
  r.total = truth.size();
  for (std::size_t i = 0; i < truth.size(); ++i) {
    auto t = state_from_level(truth[i]);
    auto p = state_from_level(predicted[i]);
    ++r.confusion[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
  }

  std::size_t trace = 0;
  for (std::size_t c = 0; c < kLevelCount; ++c) {
    auto& cs = r.classes[c];
    cs.counts.tp = r.confusion[c][c];
    for (std::size_t o = 0; o < kLevelCount; ++o) {
      if (o == c) continue;
      cs.counts.fp += r.confusion[o][c];
      cs.counts.fn += r.confusion[c][o];
    }
    cs.counts.tn = r.total - cs.counts.tp - cs.counts.fp - cs.counts.fn;
    trace += cs.counts.tp;

    cs.absent = cs.counts.tp + cs.counts.fp + cs.counts.fn == 0;
    if (cs.absent) {
      cs.precision = 1.0;
      cs.recall = 1.0;
    } else {
      cs.precision = precision(cs.counts.tp, cs.counts.fp);
      cs.recall = recall(cs.counts.tp, cs.counts.fn);
    }
    cs.f1 = f1_score(cs.precision, cs.recall);
    cs.accuracy = static_cast<double>(cs.counts.tp + cs.counts.tn) / static_cast<double>(r.total);

    r.macro_precision += cs.precision;
    r.macro_recall += cs.recall;
    r.macro_f1 += cs.f1;
  }
  r.macro_precision /= kLevelCount;
  r.macro_recall /= kLevelCount;
  r.macro_f1 /= kLevelCount;
  r.accuracy = static_cast<double>(trace) / static_cast<double>(r.total);
  return r;
}

std::string format_report(const EvalReport& r) {
  std::string out;
  char line[256];
  std::snprintf(line, sizeof(line), "samples %zu  accuracy %.3f%%  macro P %.3f%%  R %.3f%%  F1 %.3f%%\n", r.total,
                100 * r.accuracy, 100 * r.macro_precision, 100 * r.macro_recall, 100 * r.macro_f1);
  out += line;
  for (std::size_t c = 0; c < kLevelCount; ++c) {
    const auto& cs = r.classes[c];
    std::snprintf(line, sizeof(line), "  %-10s TP %5zu FP %5zu FN %5zu TN %5zu  P %7.3f%% R %7.3f%% F1 %7.3f%%%s\n",
                  std::string(state_name(static_cast<StressState>(c))).c_str(), cs.counts.tp, cs.counts.fp,
                  cs.counts.fn, cs.counts.tn, 100 * cs.precision, 100 * cs.recall, 100 * cs.f1,
                  cs.absent ? "  (absent)" : "");
    out += line;
  }
  out += "  confusion (rows truth, cols predicted):\n";
  for (const auto& row : r.confusion) {
    out += "   ";
    for (auto v : row) {
      std::snprintf(line, sizeof(line), " %6zu", v);
      out += line;
    }
    out += "\n";
  }
  return out;
}

}  // namespace sleepguard::metrics
