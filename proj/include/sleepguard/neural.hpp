#pragma once

// Fully connected 8 -> 10 -> 10 -> 5 classifier: ReLU hidden layers, softmax
// output, mean sparse cross-entropy, plain mini-batch gradient descent.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sleepguard/metrics.hpp"
#include "sleepguard/physio.hpp"

namespace sleepguard::neural {

inline constexpr std::size_t kInputs = kFeatureCount;
inline constexpr std::size_t kHidden = 10;
inline constexpr std::size_t kOutputs = kLevelCount;

// Row-major In x Out weights: weight(i, o) connects input i to unit o.
template <std::size_t In, std::size_t Out>
struct Dense {
  std::array<double, In * Out> w{};
  std::array<double, Out> b{};

  static constexpr std::size_t kIn = In;
  static constexpr std::size_t kOut = Out;

  double& weight(std::size_t i, std::size_t o) { return w[i * Out + o]; }
  double weight(std::size_t i, std::size_t o) const { return w[i * Out + o]; }

  friend bool operator==(const Dense&, const Dense&) = default;
};

// Min-max scaling to [0, 1] with bounds taken from the training split.
struct Scaler {
  FeatureVector min{};
  FeatureVector max{};

  static Scaler fit(std::span<const LabeledRow> rows);
  static Scaler identity();
  FeatureVector apply(const SleepSample& s) const;

  friend bool operator==(const Scaler&, const Scaler&) = default;
};

struct NetworkParams {
  Dense<kInputs, kHidden> l1;
  Dense<kHidden, kHidden> l2;
  Dense<kHidden, kOutputs> l3;
  Scaler scaler = Scaler::identity();
  std::uint64_t seed = 0;

  bool all_finite() const;
  // Glorot-uniform weights, zero biases.
  static NetworkParams initialize(std::uint64_t seed);

  friend bool operator==(const NetworkParams&, const NetworkParams&) = default;
};

using Input = FeatureVector;
using Logits = std::array<double, kOutputs>;

struct ForwardResult {
  Logits logits{};
  Logits probs{};
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline double relu(double x) { return x > 0 ? x : 0.0; }
Logits softmax(const Logits& z);

// Expects already-scaled input. Throws NumericError on non-finite values.
ForwardResult forward(const NetworkParams& p, const Input& x);

inline constexpr double kProbFloor = 1e-12;

// -ln(probs[label]); probabilities below kProbFloor are clamped and
// reported through `clamped`.
double loss(const Logits& probs, int label, bool* clamped = nullptr);

struct Example {
  Input x{};
  int label = 0;
};

double batch_loss(const NetworkParams& p, std::span<const Example> batch);

// Gradient of batch_loss with respect to every weight and bias, returned in
// parameter shape (scaler and seed untouched).
NetworkParams grad(const NetworkParams& p, std::span<const Example> batch);

std::vector<Example> to_examples(std::span<const LabeledRow> rows, const Scaler& scaler);

struct TrainConfig {
  std::size_t batch_size = 32;
  double learning_rate = 0.05;
  std::size_t max_steps = 20000;
  std::uint64_t seed = 7;
  std::size_t log_every = 50;
  // Stop once a logged window reaches both this training accuracy and this
  // mean loss.
  double early_stop_accuracy = 0.99;
  double early_stop_loss = 0.2;
};

struct LogEntry {
  std::size_t step = 0;
  double loss = 0;      // mean batch loss over the window
  double accuracy = 0;  // fraction of window samples predicted correctly before the update
};

struct TrainResult {
  NetworkParams params;
  std::vector<LogEntry> history;
  std::size_t steps = 0;
};

class TrainingError : public std::runtime_error {
 public:
  TrainingError(std::size_t step, const std::string& what)
      : std::runtime_error("step " + std::to_string(step) + ": " + what), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

TrainResult train(const LabeledDataset& ds, const TrainConfig& cfg);

int argmax(const Logits& v);  // lowest index on ties

metrics::EvalReport evaluate(const NetworkParams& p, std::span<const LabeledRow> rows);

struct Prediction {
  StressState state;
  double confidence_percent;
};

Prediction predict(const NetworkParams& p, const SleepSample& s);

void save_checkpoint(const NetworkParams& p, const std::filesystem::path& path);
NetworkParams load_checkpoint(const std::filesystem::path& path);
std::string checkpoint_to_json(const NetworkParams& p);
NetworkParams checkpoint_from_json(const std::string& text);

// CSV `step,loss,accuracy` (accuracy as a percentage).
std::string history_csv(const std::vector<LogEntry>& history);

}  // namespace sleepguard::neural
