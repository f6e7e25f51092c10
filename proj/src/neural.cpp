#include "sleepguard/neural.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "json.hpp"

namespace sleepguard::neural {

namespace {

double unit_uniform(std::mt19937_64& gen) { return static_cast<double>(gen() >> 11) * 0x1.0p-53; }

template <std::size_t In, std::size_t Out>
void glorot(Dense<In, Out>& layer, std::mt19937_64& gen) {
  const double r = std::sqrt(6.0 / static_cast<double>(In + Out));
  for (auto& w : layer.w) w = -r + 2 * r * unit_uniform(gen);
  layer.b.fill(0.0);
}

template <std::size_t In, std::size_t Out>
std::array<double, Out> affine(const Dense<In, Out>& layer, const std::array<double, In>& x) {
  std::array<double, Out> z = layer.b;
  for (std::size_t i = 0; i < In; ++i) {
    for (std::size_t o = 0; o < Out; ++o) z[o] += layer.weight(i, o) * x[i];
  }
  return z;
}

template <std::size_t N>
std::array<double, N> relu_all(std::array<double, N> z) {
  for (auto& v : z) v = relu(v);
  return z;
}

template <std::size_t In, std::size_t Out>
bool finite(const Dense<In, Out>& layer) {
  auto ok = [](double v) { return std::isfinite(v); };
  return std::all_of(layer.w.begin(), layer.w.end(), ok) && std::all_of(layer.b.begin(), layer.b.end(), ok);
}

// Accumulates a single example's gradient into `g` with weight `scale`.
void backprop_into(const NetworkParams& p, const Example& ex, double scale, NetworkParams& g) {
  const auto z1 = affine(p.l1, ex.x);
  const auto h1 = relu_all(z1);
  const auto z2 = affine(p.l2, h1);
  const auto h2 = relu_all(z2);
  const auto z3 = affine(p.l3, h2);
  const auto probs = softmax(z3);

  std::array<double, kOutputs> d3{};
  for (std::size_t k = 0; k < kOutputs; ++k) {
    d3[k] = scale * (probs[k] - (static_cast<int>(k) == ex.label ? 1.0 : 0.0));
  }

  std::array<double, kHidden> d2{};
  for (std::size_t i = 0; i < kHidden; ++i) {
    double s = 0;
    for (std::size_t k = 0; k < kOutputs; ++k) {
      g.l3.weight(i, k) += h2[i] * d3[k];
      s += p.l3.weight(i, k) * d3[k];
    }
    d2[i] = z2[i] > 0 ? s : 0.0;
  }
  for (std::size_t k = 0; k < kOutputs; ++k) g.l3.b[k] += d3[k];

  std::array<double, kHidden> d1{};
  for (std::size_t i = 0; i < kHidden; ++i) {
    double s = 0;
    for (std::size_t k = 0; k < kHidden; ++k) {
      g.l2.weight(i, k) += h1[i] * d2[k];
      s += p.l2.weight(i, k) * d2[k];
    }
    d1[i] = z1[i] > 0 ? s : 0.0;
  }
  for (std::size_t k = 0; k < kHidden; ++k) g.l2.b[k] += d2[k];

  for (std::size_t i = 0; i < kInputs; ++i) {
    for (std::size_t k = 0; k < kHidden; ++k) g.l1.weight(i, k) += ex.x[i] * d1[k];
  }
  for (std::size_t k = 0; k < kHidden; ++k) g.l1.b[k] += d1[k];
}

template <std::size_t In, std::size_t Out>
void descend(Dense<In, Out>& layer, const Dense<In, Out>& g, double lr) {
  for (std::size_t i = 0; i < layer.w.size(); ++i) layer.w[i] -= lr * g.w[i];
  for (std::size_t i = 0; i < layer.b.size(); ++i) layer.b[i] -= lr * g.b[i];
}

NetworkParams zeros_like(const NetworkParams& p) {
  NetworkParams g;
  g.scaler = p.scaler;
  g.seed = p.seed;
  return g;
}

}  // namespace

Scaler Scaler::fit(std::span<const LabeledRow> rows) {
  if (rows.empty()) throw std::invalid_argument("cannot fit a scaler on no rows");
  Scaler s;
  s.min = rows.front().sample.to_array();
  s.max = s.min;
  for (const auto& row : rows) {
    auto v = row.sample.to_array();
    for (std::size_t i = 0; i < kFeatureCount; ++i) {
      s.min[i] = std::min(s.min[i], v[i]);
      s.max[i] = std::max(s.max[i], v[i]);
    }
  }
  return s;
}

Scaler Scaler::identity() {
  Scaler s;
  s.min.fill(0.0);
  s.max.fill(1.0);
  return s;
}

FeatureVector Scaler::apply(const SleepSample& sample) const {
  auto v = sample.to_array();
  for (std::size_t i = 0; i < kFeatureCount; ++i) {
    double span = max[i] - min[i];
    v[i] = span > 0 ? (v[i] - min[i]) / span : 0.0;
  }
  return v;
}

bool NetworkParams::all_finite() const { return finite(l1) && finite(l2) && finite(l3); }

NetworkParams NetworkParams::initialize(std::uint64_t seed) {
  NetworkParams p;
  p.seed = seed;
  std::mt19937_64 gen(seed);
  glorot(p.l1, gen);
  glorot(p.l2, gen);
  glorot(p.l3, gen);
  return p;
}

Logits softmax(const Logits& z) {
  double m = *std::max_element(z.begin(), z.end());
  Logits out{};
  double sum = 0;
  for (std::size_t k = 0; k < kOutputs; ++k) {
    out[k] = std::exp(z[k] - m);
    sum += out[k];
  }
  for (auto& v : out) v /= sum;
  return out;
}

ForwardResult forward(const NetworkParams& p, const Input& x) {
  if (!std::all_of(x.begin(), x.end(), [](double v) { return std::isfinite(v); })) {
    throw NumericError("non-finite input");
  }
  if (!p.all_finite()) throw NumericError("non-finite parameter");
  ForwardResult r;
  r.logits = affine(p.l3, relu_all(affine(p.l2, relu_all(affine(p.l1, x)))));
  r.probs = softmax(r.logits);
  return r;
}

double loss(const Logits& probs, int label, bool* clamped) {
  double q = probs.at(static_cast<std::size_t>(label));
  bool low = q < kProbFloor;
  if (clamped) *clamped = low;
  return -std::log(low ? kProbFloor : q);
}

double batch_loss(const NetworkParams& p, std::span<const Example> batch) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  double total = 0;
  for (const auto& ex : batch) total += loss(forward(p, ex.x).probs, ex.label);
  return total / static_cast<double>(batch.size());
}

NetworkParams grad(const NetworkParams& p, std::span<const Example> batch) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  NetworkParams g = zeros_like(p);
  const double scale = 1.0 / static_cast<double>(batch.size());
  for (const auto& ex : batch) backprop_into(p, ex, scale, g);
  return g;
}

std::vector<Example> to_examples(std::span<const LabeledRow> rows, const Scaler& scaler) {
  std::vector<Example> out;
  out.reserve(rows.size());
  for (const auto& row : rows) out.push_back({scaler.apply(row.sample), level_of(row.label)});
  return out;
}

int argmax(const Logits& v) {
  return static_cast<int>(std::distance(v.begin(), std::max_element(v.begin(), v.end())));
}

TrainResult train(const LabeledDataset& ds, const TrainConfig& cfg) {
  if (ds.train().empty()) throw std::invalid_argument("training split is empty");
  if (cfg.batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
  if (!(cfg.learning_rate > 0) || !std::isfinite(cfg.learning_rate)) {
    throw std::invalid_argument("learning_rate must be finite and positive");
  }
  if (cfg.log_every == 0) throw std::invalid_argument("log_every must be >= 1");

  TrainResult result;
  result.params = NetworkParams::initialize(cfg.seed);
  result.params.scaler = Scaler::fit(ds.train());
  const auto examples = to_examples(ds.train(), result.params.scaler);

  std::mt19937_64 gen(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();

  std::vector<Example> batch;
  batch.reserve(cfg.batch_size);
  double window_loss = 0;
  std::size_t window_batches = 0;
  std::size_t window_correct = 0;
  std::size_t window_seen = 0;

  for (std::size_t step = 1; step <= cfg.max_steps; ++step) {
    batch.clear();
    while (batch.size() < cfg.batch_size) {
      if (cursor == order.size()) {
        for (std::size_t i = order.size(); i > 1; --i) {
          std::swap(order[i - 1], order[static_cast<std::size_t>(gen() % i)]);
        }
        cursor = 0;
      }
      batch.push_back(examples[order[cursor++]]);
      if (batch.size() == examples.size()) break;
    }

    double l = 0;
    for (const auto& ex : batch) {
      auto fr = forward(result.params, ex.x);
      l += loss(fr.probs, ex.label);
      if (argmax(fr.probs) == ex.label) ++window_correct;
    }
    l /= static_cast<double>(batch.size());
    if (!std::isfinite(l)) throw TrainingError(step, "loss diverged");
    window_loss += l;
    ++window_batches;
    window_seen += batch.size();

    auto g = grad(result.params, batch);
    descend(result.params.l1, g.l1, cfg.learning_rate);
    descend(result.params.l2, g.l2, cfg.learning_rate);
    descend(result.params.l3, g.l3, cfg.learning_rate);
    if (!result.params.all_finite()) throw TrainingError(step, "parameters became non-finite");
    result.steps = step;

    if (step % cfg.log_every == 0 || step == cfg.max_steps) {
      LogEntry e{step, window_loss / static_cast<double>(window_batches),
                 static_cast<double>(window_correct) / static_cast<double>(window_seen)};
      result.history.push_back(e);
      window_loss = 0;
      window_batches = 0;
      window_correct = 0;
      window_seen = 0;
      if (e.accuracy >= cfg.early_stop_accuracy && e.loss <= cfg.early_stop_loss) break;
    }
  }
  return result;
}

metrics::EvalReport evaluate(const NetworkParams& p, std::span<const LabeledRow> rows) {
  std::vector<int> truth;
  std::vector<int> predicted;
  truth.reserve(rows.size());
  predicted.reserve(rows.size());
  for (const auto& row : rows) {
    truth.push_back(level_of(row.label));
    predicted.push_back(argmax(forward(p, p.scaler.apply(row.sample)).probs));
  }
  return metrics::evaluate_predictions(truth, predicted);
}

Prediction predict(const NetworkParams& p, const SleepSample& s) {
  auto probs = forward(p, p.scaler.apply(s)).probs;
  int k = argmax(probs);
  return {static_cast<StressState>(k), 100.0 * probs[static_cast<std::size_t>(k)]};
}

std::string checkpoint_to_json(const NetworkParams& p) {
  using nlohmann::json;
  json j;
  j["format"] = "sleepguard-fcnn";
  j["version"] = 1;
  j["shapes"] = {{"W1", {kInputs, kHidden}}, {"b1", {kHidden}},  {"W2", {kHidden, kHidden}},
                 {"b2", {kHidden}},          {"W3", {kHidden, kOutputs}}, {"b3", {kOutputs}}};
  j["seed"] = p.seed;
  j["scaler"] = {{"min", p.scaler.min}, {"max", p.scaler.max}};
  j["W1"] = p.l1.w;
  j["b1"] = p.l1.b;
  j["W2"] = p.l2.w;
  j["b2"] = p.l2.b;
  j["W3"] = p.l3.w;
  j["b3"] = p.l3.b;
  return j.dump(1);
}

NetworkParams checkpoint_from_json(const std::string& text) {
  using nlohmann::json;
  json j = json::parse(text);
  if (j.value("format", "") != "sleepguard-fcnn") throw std::runtime_error("not a model checkpoint");
  if (j.value("version", 0) != 1) throw std::runtime_error("unsupported checkpoint version");
  NetworkParams p;
  auto load = [&](const char* key, auto& arr) {
    const auto& v = j.at(key);
    if (!v.is_array() || v.size() != arr.size()) {
      throw std::runtime_error(std::string("checkpoint field ") + key + " has wrong shape");
    }
    for (std::size_t i = 0; i < arr.size(); ++i) arr[i] = v[i].get<double>();
  };
  load("W1", p.l1.w);
  load("b1", p.l1.b);
  load("W2", p.l2.w);
  load("b2", p.l2.b);
  load("W3", p.l3.w);
  load("b3", p.l3.b);
  const auto& sc = j.at("scaler");
  for (std::size_t i = 0; i < kFeatureCount; ++i) {
    p.scaler.min[i] = sc.at("min").at(i).get<double>();
    p.scaler.max[i] = sc.at("max").at(i).get<double>();
  }
  p.seed = j.at("seed").get<std::uint64_t>();
  if (!p.all_finite()) throw std::runtime_error("checkpoint holds non-finite parameters");
  return p;
}

void save_checkpoint(const NetworkParams& p, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << checkpoint_to_json(p) << '\n';
}

NetworkParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return checkpoint_from_json(ss.str());
}

std::string history_csv(const std::vector<LogEntry>& history) {
  std::string out = "step,loss,accuracy\n";
  for (const auto& e : history) {
    out += std::to_string(e.step) + "," + format_double(e.loss) + "," + format_double(100.0 * e.accuracy) + "\n";
  }
  return out;
}

}  // namespace sleepguard::neural
