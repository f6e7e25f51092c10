#include "cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <optional>
#include <sstream>

#include "sleepguard/contracts.hpp"
#include "sleepguard/fuzzy.hpp"
#include "sleepguard/gateway.hpp"
#include "sleepguard/ledger.hpp"
#include "sleepguard/metrics.hpp"
#include "sleepguard/session.hpp"

namespace sleepguard::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A refused request: printed like any operational error.
class Denied : public std::runtime_error {
 public:
  explicit Denied(const std::string& reason) : std::runtime_error("denied: " + reason) {}
};

template <typename T>
T get_value(const json& v, const std::string& key) {
  try {
    return v.get<T>();
  } catch (const json::exception&) {
    throw std::invalid_argument("config key '" + key + "' has the wrong type");
  }
}

StressState parse_state(std::string_view s) {
  for (int k = 0; k < static_cast<int>(kLevelCount); ++k) {
    auto st = state_from_level(k);
    if (s == state_short_name(st) || s == state_name(st) || s == std::to_string(k)) return st;
  }
  throw UsageError("unknown stress state '" + std::string(s) + "'");
}

Feature parse_feature(std::string_view s) {
  for (auto f : kAllFeatures) {
    if (s == feature_name(f)) return f;
  }
  throw UsageError("unknown feature '" + std::string(s) + "'");
}

std::string short_hex(const Hash256& h) { return to_hex(h).substr(0, 16); }

json sample_json(const SleepSample& s) {
  json j = json::object();
  for (auto f : kAllFeatures) j[std::string(feature_name(f))] = s[f];
  return j;
}

json record_json(const contracts::PhysioRecord& r) {
  json j;
  j["timestamp"] = r.timestamp;
  j["sample"] = sample_json(r.sample);
  j["detected"] = state_short_name(r.detected);
  j["indicator"] = indicator_name(r.detected);
  j["predicted"] = r.predicted;
  return j;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f << text;
  if (!f) throw std::runtime_error("write failed: " + path);
}

std::string read_text(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// Key argument: a 64-hex key id, or a key file (keypair or public key).
crypto::KeyId resolve_key_id(const std::string& arg) {
  if (arg.size() == 64 && std::all_of(arg.begin(), arg.end(), [](char c) { return std::isxdigit(c); })) {
    auto b = from_hex(arg);
    crypto::KeyId id{};
    std::copy(b.begin(), b.end(), id.begin());
    return id;
  }
  auto text = read_text(arg);
  try {
    return crypto::keypair_from_json(text).id;
  } catch (const crypto::KeyError&) {
    return crypto::key_id(crypto::public_key_from_json(text));
  }
}

session::Classifier make_classifier(const Config& cfg) {
  if (cfg.classifier == "crisp") return session::crisp_classifier();
  if (cfg.classifier == "fuzzy") {
    auto rb = std::make_shared<fuzzy::FuzzyRuleBase>(fuzzy::build_rule_base());
    return [rb](const SleepSample& s) { return fuzzy::label_from_output(fuzzy::infer(s, *rb)); };
  }
  if (cfg.classifier == "neural") {
    auto params = std::make_shared<neural::NetworkParams>(neural::load_checkpoint(cfg.model));
    return [params](const SleepSample& s) { return neural::predict(*params, s).state; };
  }
  throw UsageError("unknown classifier '" + cfg.classifier + "' (crisp, fuzzy or neural)");
}

struct NightReport {
  session::Session session;
  std::vector<session::StressWindow> windows;
  session::NextDayPrediction prediction;
  std::vector<session::ActionRecord> actions;
};

NightReport analyze_night(const std::vector<session::SensorFrame>& frames, const Config& cfg) {
  NightReport r{session::run_session(frames), {}, {}, {}};
  if (!r.session.t2() || !r.session.t3()) throw std::runtime_error("replay holds no completed sleep");
  r.windows = session::detect_windows(r.session, make_classifier(cfg), cfg.window_minutes * 60);
  auto latency = *r.session.latency_minutes();
  r.prediction = session::predict_next_day(std::span<const session::StressWindow>(r.windows), latency);
  session::ControlInput in{true, latency, {}, r.prediction};
  for (const auto& w : r.windows) in.detected.push_back(w.detected);
  r.actions = session::control_actions(in);
  return r;
}

gateway::Deployment open_state(const Config& cfg) {
  if (!fs::exists(fs::path(cfg.state) / "chain.bin")) {
    throw std::runtime_error("no deployment in " + cfg.state + " (run 'chain init')");
  }
  return gateway::load_deployment(cfg.state);
}

// Errors stay on one line so scripts can parse them.
void report(std::ostream& err, std::string_view prefix, std::string msg) {
  std::replace(msg.begin(), msg.end(), '\n', ' ');
  err << "error: " << prefix << msg << '\n';
}

std::uint64_t wall_seconds() {
  return static_cast<std::uint64_t>(
      std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch()).count());
}

}  // namespace

std::string_view indicator_name(StressState s) {
  switch (s) {
    case StressState::LowNormal: return "led-green";
    case StressState::MediumLow: return "led-blue";
    case StressState::Medium: return "led-yellow";
    case StressState::MediumHigh: return "led-orange";
    case StressState::High: return "led-red";
  }
  return "?";
}

Config config_from_json(const std::string& text, Config c) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("config must be a JSON object");
  for (auto& [key, v] : j.items()) {
    if (key == "data") c.data = get_value<std::string>(v, key);
    else if (key == "model") c.model = get_value<std::string>(v, key);
    else if (key == "state") c.state = get_value<std::string>(v, key);
    else if (key == "target_bits") c.target_bits = get_value<double>(v, key);
    else if (key == "window_minutes") c.window_minutes = get_value<int>(v, key);
    else if (key == "classifier") c.classifier = get_value<std::string>(v, key);
    else if (key == "train") {
      if (!v.is_object()) throw std::invalid_argument("config key 'train' must be an object");
      for (auto& [tk, tv] : v.items()) {
        auto name = "train." + tk;
        if (tk == "batch_size") c.train.batch_size = get_value<std::size_t>(tv, name);
        else if (tk == "learning_rate") c.train.learning_rate = get_value<double>(tv, name);
        else if (tk == "max_steps") c.train.max_steps = get_value<std::size_t>(tv, name);
        else if (tk == "seed") c.train.seed = get_value<std::uint64_t>(tv, name);
        else if (tk == "log_every") c.train.log_every = get_value<std::size_t>(tv, name);
        else if (tk == "early_stop_accuracy") c.train.early_stop_accuracy = get_value<double>(tv, name);
        else if (tk == "early_stop_loss") c.train.early_stop_loss = get_value<double>(tv, name);
        else throw std::invalid_argument("unknown config key '" + name + "'");
      }
    } else {
      throw std::invalid_argument("unknown config key '" + key + "'");
    }
  }
  if (c.window_minutes <= 0) throw std::invalid_argument("window_minutes must be positive");
  if (c.target_bits < 0 || c.target_bits > 192) throw std::invalid_argument("target_bits must be within [0, 192]");
  return c;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Sleep-based stress detection, control and secure storage toolkit", "sleepguard"};
  app.require_subcommand(1);
  app.fallthrough();

  std::optional<std::string> config_path, data, model, state, classifier;
  std::optional<double> bits;
  std::optional<int> window;
  std::optional<std::uint64_t> seed;
  bool as_json = false;
  app.add_option("--config", config_path, "JSON config file; flags override it");
  app.add_option("--data", data, "Dataset CSV path");
  app.add_option("--model", model, "Model checkpoint path");
  app.add_option("--state", state, "Deployment state directory");
  app.add_option("--bits", bits, "Proof-of-work difficulty in leading zero bits");
  app.add_option("--window", window, "Stress window length in minutes");
  app.add_option("--classifier", classifier, "crisp, fuzzy or neural");
  app.add_option("--seed", seed, "Seed for every random choice");
  app.add_flag("--json", as_json, "Machine-readable output");

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic labelled dataset");
  std::size_t per_class = 3000;
  std::optional<std::string> gen_out;
  gen->add_option("--per-class", per_class, "Rows per stress state")->check(CLI::PositiveNumber);
  gen->add_option("--out", gen_out, "Output CSV (defaults to --data)");

  auto* night = app.add_subcommand("gen-night", "Generate a scripted sensor replay for one night");
  std::string night_out = "night.csv";
  std::string night_state = "L/N";
  double night_latency = 32, night_hours = 8;
  std::int64_t night_step = 60;
  bool night_relaxed = false;
  night->add_option("--out", night_out, "Output replay CSV");
  night->add_option("--stress", night_state, "Stress state of the night's readings");
  night->add_option("--latency", night_latency, "Minutes from lying down to sleep onset")->check(CLI::PositiveNumber);
  night->add_option("--hours", night_hours, "Hours asleep")->check(CLI::PositiveNumber);
  night->add_option("--step", night_step, "Seconds between frames")->check(CLI::PositiveNumber);
  night->add_flag("--relaxed", night_relaxed, "Wake relaxed instead of alert");

  auto* train_cmd = app.add_subcommand("train", "Train the neural classifier");
  std::optional<std::size_t> steps, batch;
  std::optional<double> lr;
  std::optional<std::string> history;
  train_cmd->add_option("--steps", steps, "Maximum optimizer steps");
  train_cmd->add_option("--batch", batch, "Mini-batch size");
  train_cmd->add_option("--lr", lr, "Learning rate");
  train_cmd->add_option("--history", history, "Write the loss log CSV here");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a trained model on the test split");

  auto* fuzzy_cmd = app.add_subcommand("fuzzy", "Inspect the fuzzy rule base");
  fuzzy_cmd->require_subcommand(1);
  auto* count = fuzzy_cmd->add_subcommand("count", "Number of rules for p parameters and i inputs");
  std::uint64_t count_p = 8, count_i = 5;
  count->add_option("-p", count_p, "Parameters")->check(CLI::PositiveNumber);
  count->add_option("-i", count_i, "Input levels")->check(CLI::PositiveNumber);
  auto* surface = fuzzy_cmd->add_subcommand("surface", "Output surface over two features as CSV");
  std::string sx = "snoring", sy = "heart_rate", sbase = "M";
  std::size_t ssteps = 21;
  std::optional<std::string> sout;
  surface->add_option("--x", sx, "Feature on the x axis");
  surface->add_option("--y", sy, "Feature on the y axis");
  surface->add_option("--base", sbase, "State whose midpoints fix the other features");
  surface->add_option("--steps", ssteps, "Grid points per axis")->check(CLI::Range(2, 1001));
  surface->add_option("--out", sout, "Output CSV (stdout if absent)");

  auto* detect = app.add_subcommand("detect", "Replay a night and report stages, windows and actions");
  std::string replay_path;
  detect->add_option("replay", replay_path, "Replay CSV")->required();

  auto* predict_cmd = app.add_subcommand("predict", "Next-day outlook from window states or a replay");
  std::optional<std::string> predict_replay;
  std::vector<std::string> predict_states;
  std::optional<double> predict_latency;
  predict_cmd->add_option("replay", predict_replay, "Replay CSV");
  predict_cmd->add_option("--states", predict_states, "Window states, e.g. L/N,M,H")->delimiter(',');
  predict_cmd->add_option("--latency", predict_latency, "Sleep latency in minutes");

  auto* chain_cmd = app.add_subcommand("chain", "Chain lifecycle");
  chain_cmd->require_subcommand(1);
  auto* chain_init = chain_cmd->add_subcommand("init", "Create keys, genesis and deployed contracts");
  std::optional<std::string> owner_key;
  chain_init->add_option("--owner", owner_key, "Existing keypair file for the user and edge device");
  auto* chain_verify = chain_cmd->add_subcommand("verify", "Verify every block and recorded hash");
  auto* chain_export = chain_cmd->add_subcommand("export", "Block explorer dump");
  std::optional<std::string> audit_out;
  chain_export->add_option("--audit", audit_out, "Also write the contract audit log CSV here");

  auto* keys_cmd = app.add_subcommand("keys", "Key management");
  keys_cmd->require_subcommand(1);
  auto* keys_gen = keys_cmd->add_subcommand("gen", "Generate a keypair file");
  std::string key_out;
  std::string key_label = "key";
  std::optional<std::string> pub_out;
  keys_gen->add_option("--out", key_out, "Keypair file")->required();
  keys_gen->add_option("--label", key_label, "Label mixed into seeded generation");
  keys_gen->add_option("--public-out", pub_out, "Also write the public key file here");

  auto* roles = app.add_subcommand("roles", "Access-policy changes, made by the user");
  roles->require_subcommand(1);
  std::optional<std::string> roles_as;
  roles->add_option("--as", roles_as, "Caller keypair file (defaults to the user)");
  auto* role_add = roles->add_subcommand("add", "Add a role");
  std::string role_name;
  std::vector<std::string> role_perms;
  role_add->add_option("name", role_name)->required();
  role_add->add_option("--perm", role_perms, "retrieve or averages (default both)");
  auto* role_remove = roles->add_subcommand("remove", "Remove a role and unbind its bearers");
  role_remove->add_option("name", role_name)->required();
  auto* role_bind = roles->add_subcommand("bind", "Bind a key to a role");
  std::string bind_key;
  role_bind->add_option("key", bind_key, "Key file or key id")->required();
  role_bind->add_option("role", role_name)->required();
  auto* role_unbind = roles->add_subcommand("unbind", "Remove a key's role");
  role_unbind->add_option("key", bind_key, "Key file or key id")->required();

  auto* upload = app.add_subcommand("upload", "Upload records through the admin node");
  std::optional<std::string> upload_as, upload_replay, capture;
  std::size_t upload_count = 1;
  std::optional<std::uint64_t> epoch;
  upload->add_option("--as", upload_as, "Edge keypair file (defaults to the user)");
  upload->add_option("--replay", upload_replay, "Upload one record per stress window of this night");
  upload->add_option("--count", upload_count, "Synthetic records to upload when no replay is given");
  upload->add_option("--epoch", epoch, "Timestamp of the first record");
  upload->add_option("--capture", capture, "Dump every wire message to this file");

  auto* retrieve = app.add_subcommand("retrieve", "Request data through the admin node");
  std::string requester_key;
  bool want_averages = false;
  std::optional<std::uint64_t> now_opt;
  retrieve->add_option("--key", requester_key, "Requester keypair file")->required();
  retrieve->add_flag("--averages", want_averages, "Trailing 24-hour averages instead of the latest record");
  retrieve->add_option("--now", now_opt, "End of the averaging window (defaults to the latest record)");
  retrieve->add_option("--capture", capture, "Dump every wire message to this file");

  auto* threats = app.add_subcommand("threats", "Run the four attack scenarios");
  gateway::Hooks hooks;
  threats->add_flag("--disable-signature-check", hooks.disable_signature_check, "Negative control for threat 1");
  threats->add_flag("--plaintext-on-chain", hooks.store_plaintext_on_chain, "Negative control for threat 4");

  auto* bench = app.add_subcommand("bench", "Transaction time per contract function");
  std::size_t trials = 10;
  std::vector<double> bench_bits{8, 16};
  bench->add_option("--trials", trials, "Trials per function")->check(CLI::PositiveNumber);
  bench->add_option("--difficulties", bench_bits, "Difficulties in leading zero bits")->delimiter(',');

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    report(err, "usage: ", e.what());
    return kExitUsage;
  }

  Config cfg;
  try {
    if (config_path) cfg = config_from_json(read_text(*config_path));
    if (data) cfg.data = *data;
    if (model) cfg.model = *model;
    if (state) cfg.state = *state;
    if (bits) cfg.target_bits = *bits;
    if (window) cfg.window_minutes = *window;
    if (classifier) cfg.classifier = *classifier;
    if (steps) cfg.train.max_steps = *steps;
    if (batch) cfg.train.batch_size = *batch;
    if (lr) cfg.train.learning_rate = *lr;
    if (seed) cfg.train.seed = *seed;
    if (cfg.window_minutes <= 0) throw UsageError("--window must be positive");
    if (cfg.target_bits < 0 || cfg.target_bits > 192) throw UsageError("--bits must be within [0, 192]");
  } catch (const std::invalid_argument& e) {
    report(err, "usage: ", e.what());
    return kExitUsage;
  } catch (const UsageError& e) {
    report(err, "usage: ", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    report(err, "", e.what());
    return kExitFailure;
  }

  try {
    if (gen->parsed()) {
      auto ds = synth_dataset(per_class, seed.value_or(7));
      auto path = gen_out.value_or(cfg.data);
      write_csv(ds, path);
      if (as_json) {
        out << json{{"rows", ds.rows.size()}, {"train", ds.train_size}, {"test", ds.rows.size() - ds.train_size},
                    {"path", path}}
                   .dump()
            << '\n';
      } else {
        out << "wrote " << ds.rows.size() << " rows (" << ds.train_size << " train, "
            << ds.rows.size() - ds.train_size << " test) to " << path << '\n';
      }
    } else if (night->parsed()) {
      session::NightPlan plan;
      plan.step = night_step;
      plan.latency = static_cast<session::Seconds>(night_latency * 60);
      plan.sleep = static_cast<session::Seconds>(night_hours * 3600);
      plan.state = parse_state(night_state);
      plan.wake_alert = !night_relaxed;
      auto frames = session::synth_night(plan, seed.value_or(7));
      session::write_replay(frames, night_out);
      out << "wrote " << frames.size() << " frames to " << night_out << '\n';
    } else if (train_cmd->parsed()) {
      auto ds = load_csv(cfg.data);
      auto result = neural::train(ds, cfg.train);
      neural::save_checkpoint(result.params, cfg.model);
      if (history) write_text(*history, neural::history_csv(result.history));
      auto test = neural::evaluate(result.params, ds.test());
      const auto& last = result.history.back();
      if (as_json) {
        out << json{{"steps", result.steps},
                    {"final_loss", last.loss},
                    {"train_accuracy", last.accuracy},
                    {"test_accuracy", test.accuracy},
                    {"model", cfg.model}}
                   .dump()
            << '\n';
      } else {
        char line[200];
        std::snprintf(line, sizeof line, "steps %zu  final loss %.4f  window accuracy %.2f%%  test accuracy %.2f%%\n",
                      result.steps, last.loss, 100 * last.accuracy, 100 * test.accuracy);
        out << line << "saved " << cfg.model << '\n';
      }
    } else if (eval_cmd->parsed()) {
      auto ds = load_csv(cfg.data);
      auto params = neural::load_checkpoint(cfg.model);
      auto rep = neural::evaluate(params, ds.test());
      if (as_json) {
        json cls = json::array();
        for (std::size_t k = 0; k < kLevelCount; ++k) {
          const auto& c = rep.classes[k];
          cls.push_back({{"state", state_short_name(state_from_level(static_cast<int>(k)))},
                         {"precision", c.precision},
                         {"recall", c.recall},
                         {"accuracy", c.accuracy},
                         {"f1", c.f1}});
        }
        out << json{{"samples", rep.total},
                    {"accuracy", rep.accuracy},
                    {"macro_precision", rep.macro_precision},
                    {"macro_recall", rep.macro_recall},
                    {"macro_f1", rep.macro_f1},
                    {"classes", cls},
                    {"confusion", rep.confusion}}
                   .dump()
            << '\n';
      } else {
        out << metrics::format_report(rep);
      }
    } else if (count->parsed()) {
      auto n = fuzzy::rule_count(count_p, count_i);
      if (as_json) out << json{{"p", count_p}, {"i", count_i}, {"rules", n}}.dump() << '\n';
      else out << n << '\n';
    } else if (surface->parsed()) {
      auto fx = parse_feature(sx), fy = parse_feature(sy);
      if (fx == fy) throw UsageError("--x and --y must differ");
      auto pts = fuzzy::surface(fx, fy, parse_state(sbase), ssteps, fuzzy::build_rule_base());
      std::ostringstream csv;
      csv << "x,y,output\n";
      for (const auto& p : pts) csv << format_double(p.x) << ',' << format_double(p.y) << ',' << format_double(p.output) << '\n';
      if (sout) {
        write_text(*sout, csv.str());
        out << "wrote " << pts.size() << " points to " << *sout << '\n';
      } else {
        out << csv.str();
      }
    } else if (detect->parsed()) {
      auto r = analyze_night(session::load_replay(replay_path), cfg);
      const auto& s = r.session;
      if (as_json) {
        json segs = json::array();
        for (const auto& g : s.segments()) segs.push_back({{"start", g.start}, {"end", g.end}, {"stage", session::stage_name(g.stage)}});
        json wins = json::array();
        for (std::size_t k = 0; k < r.windows.size(); ++k) {
          const auto& w = r.windows[k];
          wins.push_back({{"index", k},
                          {"start", w.start},
                          {"end", w.end},
                          {"state", state_short_name(w.detected)},
                          {"indicator", indicator_name(w.detected)},
                          {"frames", w.frame_count},
                          {"carried", w.carried}});
        }
        json acts = json::array();
        for (const auto& a : r.actions) acts.push_back(json::parse(session::action_line(a)));
        out << json{{"t1", *s.t1()},
                    {"t2", *s.t2()},
                    {"t3", *s.t3()},
                    {"latency_minutes", *s.latency_minutes()},
                    {"slept_minutes", *s.slept_minutes()},
                    {"segments", segs},
                    {"windows", wins},
                    {"prediction", {{"sp", session::outlook_name(r.prediction.sp)}, {"advisory", r.prediction.advisory}}},
                    {"actions", acts}}
                   .dump()
            << '\n';
      } else {
        char line[200];
        std::snprintf(line, sizeof line, "latency %.1f min  slept %.1f min  windows %zu  classifier %s\n",
                      *s.latency_minutes(), *s.slept_minutes(), r.windows.size(), cfg.classifier.c_str());
        out << line;
        for (const auto& g : s.segments()) {
          out << "stage " << g.start << ' ' << g.end << ' ' << session::stage_name(g.stage) << '\n';
        }
        for (std::size_t k = 0; k < r.windows.size(); ++k) {
          const auto& w = r.windows[k];
          out << "window " << k << ' ' << w.start << ' ' << w.end << ' ' << state_short_name(w.detected) << ' '
              << indicator_name(w.detected) << (w.carried ? " carried" : "") << '\n';
        }
        for (const auto& a : r.actions) out << session::action_line(a) << '\n';
        out << "outlook " << session::outlook_name(r.prediction.sp) << ": " << r.prediction.advisory << '\n';
      }
    } else if (predict_cmd->parsed()) {
      session::NextDayPrediction p;
      std::vector<StressState> states;
      double latency = 0;
      if (predict_replay) {
        auto r = analyze_night(session::load_replay(*predict_replay), cfg);
        p = r.prediction;
        for (const auto& w : r.windows) states.push_back(w.detected);
        latency = p.latency_minutes;
      } else {
        if (predict_states.empty() || !predict_latency) throw UsageError("predict needs a replay or --states and --latency");
        for (const auto& s : predict_states) states.push_back(parse_state(s));
        latency = *predict_latency;
        p = session::predict_next_day(std::span<const StressState>(states), latency);
      }
      session::ControlInput in{false, latency, {}, p};
      std::vector<session::ActionRecord> next_day;
      for (auto& a : session::control_actions(in)) {
        if (a.phase == session::Phase::NextDay) next_day.push_back(a);
      }
      if (as_json) {
        json acts = json::array();
        for (const auto& a : next_day) acts.push_back(json::parse(session::action_line(a)));
        out << json{{"sp", session::outlook_name(p.sp)}, {"latency_minutes", latency}, {"windows", states.size()},
                    {"advisory", p.advisory}, {"actions", acts}}
                   .dump()
            << '\n';
      } else {
        out << "outlook " << session::outlook_name(p.sp) << ": " << p.advisory << '\n';
        for (const auto& a : next_day) out << session::action_line(a) << '\n';
      }
    } else if (chain_init->parsed()) {
      fs::path dir(cfg.state);
      if (fs::exists(dir / "chain.bin")) throw std::runtime_error(cfg.state + " already holds a chain");
      auto admin = seed ? crypto::KeyPair::deterministic("admin", *seed) : crypto::KeyPair::generate();
      auto owner = owner_key ? crypto::load_keypair(*owner_key)
                             : (seed ? crypto::KeyPair::deterministic("owner", *seed) : crypto::KeyPair::generate());
      auto genesis = seed ? std::uint64_t{1'700'000'000} : wall_seconds();
      gateway::Deployment d(admin, owner, ledger::target_from_bits(cfg.target_bits), genesis);
      gateway::save_deployment(d, dir);
      if (as_json) {
        out << json{{"admin", to_hex(admin.id)}, {"owner", to_hex(owner.id)}, {"height", d.chain().height()},
                    {"target_bits", cfg.target_bits}}
                   .dump()
            << '\n';
      } else {
        out << "admin " << to_hex(admin.id) << "\nowner " << to_hex(owner.id) << "\nheight " << d.chain().height()
            << "  difficulty " << cfg.target_bits << " bits\n";
      }
    } else if (chain_verify->parsed()) {
      ledger::Chain chain = [&] {
        try {
          return ledger::load_chain(fs::path(cfg.state) / "chain.bin");
        } catch (const DecodeError& e) {
          throw std::runtime_error(std::string("chain file corrupt: ") + e.what());
        }
      }();
      if (auto f = chain.verify()) {
        std::string kinds;
        for (const auto& v : f->violations) kinds += (kinds.empty() ? "" : ",") + std::string(ledger::violation_name(v.kind));
        throw std::runtime_error("chain invalid at height " + std::to_string(f->height) + ": " + kinds);
      }
      if (as_json) out << json{{"valid", true}, {"height", chain.height()}}.dump() << '\n';
      else out << "ok height " << chain.height() << " tip " << to_hex(chain.tip_hash()) << '\n';
    } else if (chain_export->parsed()) {
      auto d = open_state(cfg);
      out << ledger::explorer_dump(d.chain());
      if (audit_out) write_text(*audit_out, contracts::audit_csv(d.engine().audit()));
    } else if (keys_gen->parsed()) {
      auto kp = seed ? crypto::KeyPair::deterministic("keys/" + key_label, *seed) : crypto::KeyPair::generate();
      crypto::save_keypair(kp, key_out);
      if (pub_out) write_text(*pub_out, crypto::public_key_to_json(kp.public_key));
      if (as_json) out << json{{"id", to_hex(kp.id)}, {"path", key_out}}.dump() << '\n';
      else out << to_hex(kp.id) << '\n';
    } else if (roles->parsed()) {
      auto d = open_state(cfg);
      auto caller = roles_as ? crypto::load_keypair(*roles_as) : d.owner();
      gateway::PolicyResult r;
      std::string subject = role_name;
      if (role_add->parsed()) {
        std::vector<contracts::Permission> perms;
        for (const auto& p : role_perms) {
          auto perm = contracts::parse_permission(p);
          if (!perm) throw UsageError("unknown permission '" + p + "' (retrieve or averages)");
          perms.push_back(*perm);
        }
        r = d.add_role(caller, role_name, perms);
      } else if (role_remove->parsed()) {
        r = d.remove_role(caller, role_name);
      } else if (role_bind->parsed()) {
        auto id = resolve_key_id(bind_key);
        subject = to_hex(id) + " -> " + role_name;
        r = d.add_bearer(caller, id, role_name);
      } else {
        auto id = resolve_key_id(bind_key);
        subject = to_hex(id);
        r = d.remove_bearer(caller, id);
      }
      gateway::save_deployment(d, cfg.state);
      if (!r.granted) throw Denied(r.reason);
      if (as_json) out << json{{"granted", true}, {"subject", subject}, {"height", r.receipt->height}}.dump() << '\n';
      else out << "ok " << subject << " at height " << r.receipt->height << '\n';
    } else if (upload->parsed()) {
      auto d = open_state(cfg);
      auto edge = upload_as ? crypto::load_keypair(*upload_as) : d.owner();
      const auto& recs = d.engine().store().records;
      std::uint64_t base = epoch.value_or(recs.empty() ? d.chain().block(0).header.timestamp : recs.back().timestamp + 900);
      std::vector<contracts::PhysioRecord> batch_recs;
      if (upload_replay) {
        auto r = analyze_night(session::load_replay(*upload_replay), cfg);
        auto t2 = *r.session.t2();
        for (const auto& w : r.windows) {
          contracts::PhysioRecord p;
          p.timestamp = base + static_cast<std::uint64_t>(w.start - t2);
          p.sample = w.mean;
          p.detected = w.detected;
          p.predicted = std::string(session::outlook_name(r.prediction.sp));
          batch_recs.push_back(p);
        }
      } else {
        for (std::size_t i = 0; i < upload_count; ++i) {
          batch_recs.push_back(gateway::sample_record(base + 900 * i, seed.value_or(7) * 1000 + i));
        }
      }
      json lines = json::array();
      std::string failure;
      for (const auto& rec : batch_recs) {
        auto r = d.upload(edge, rec);
        if (!r.accepted) {
          failure = r.stage + ": " + r.reason;
          break;
        }
        if (as_json) {
          lines.push_back({{"timestamp", rec.timestamp}, {"height", r.receipt->height}, {"block", to_hex(r.receipt->block_hash)}});
        } else {
          out << "stored " << rec.timestamp << " " << state_short_name(rec.detected) << " height " << r.receipt->height
              << " block " << short_hex(r.receipt->block_hash) << '\n';
        }
      }
      gateway::save_deployment(d, cfg.state);
      if (capture) d.bus().write_capture(*capture);
      if (as_json) out << json{{"stored", lines}}.dump() << '\n';
      if (!failure.empty()) throw Denied(failure);
    } else if (retrieve->parsed()) {
      auto d = open_state(cfg);
      auto requester = crypto::load_keypair(requester_key);
      const auto& recs = d.engine().store().records;
      auto now = now_opt.value_or(recs.empty() ? 0 : recs.back().timestamp);
      auto r = d.retrieve(requester, want_averages ? gateway::Query::Averages : gateway::Query::Latest, now);
      gateway::save_deployment(d, cfg.state);
      if (capture) d.bus().write_capture(*capture);
      if (!r.granted) throw Denied(r.reason);
      json j;
      if (r.record) {
        j = record_json(*r.record);
      } else {
        j = {{"count", r.averages->count},
             {"mean", sample_json(r.averages->mean)},
             {"modal", state_short_name(r.averages->modal)},
             {"indicator", indicator_name(r.averages->modal)}};
      }
      out << (as_json ? j.dump() : j.dump(2)) << '\n';
    } else if (threats->parsed()) {
      auto report = gateway::threat_suite(hooks);
      bool all = std::all_of(report.begin(), report.end(), [](const auto& t) { return t.passed; });
      if (as_json) {
        json rows = json::array();
        for (const auto& t : report) rows.push_back({{"threat", t.id}, {"name", t.name}, {"passed", t.passed}, {"detail", t.detail}});
        out << json{{"passed", all}, {"threats", rows}}.dump() << '\n';
      } else {
        for (const auto& t : report) {
          out << "threat " << t.id << " " << t.name << ": " << (t.passed ? "PASS" : "FAIL") << " (" << t.detail << ")\n";
        }
      }
      if (!all) return kExitFailure;
    } else if (bench->parsed()) {
      if (bench_bits.empty()) throw UsageError("--difficulties needs at least one value");
      std::vector<gateway::TimingReport> reports;
      for (double b : bench_bits) {
        if (b < 0 || b > 32) throw UsageError("bench difficulties must be within [0, 32] bits");
        reports.push_back(gateway::tt_metrics(trials, ledger::target_from_bits(b), seed.value_or(1)));
      }
      bool monotone = true;
      for (std::size_t k = 1; k < reports.size(); ++k) {
        for (std::size_t f = 0; f < reports[k].rows.size(); ++f) {
          bool harder = bench_bits[k] > bench_bits[k - 1];
          if (harder && !(reports[k].rows[f].mean_s > reports[k - 1].rows[f].mean_s)) monotone = false;
        }
      }
      if (as_json) {
        json rs = json::array();
        for (std::size_t k = 0; k < reports.size(); ++k) {
          for (const auto& row : reports[k].rows) {
            rs.push_back({{"bits", bench_bits[k]}, {"function", row.function}, {"min_s", row.min_s}, {"max_s", row.max_s},
                          {"mean_s", row.mean_s}});
          }
        }
        out << json{{"trials", trials}, {"rows", rs}, {"monotone", monotone}}.dump() << '\n';
      } else {
        char line[200];
        out << "bits  function        min_s      max_s      mean_s\n";
        for (std::size_t k = 0; k < reports.size(); ++k) {
          for (const auto& row : reports[k].rows) {
            std::snprintf(line, sizeof line, "%4.1f  %-14s  %9.6f  %9.6f  %9.6f\n", bench_bits[k], row.function.c_str(),
                          row.min_s, row.max_s, row.mean_s);
            out << line;
          }
        }
        out << "trials " << trials << "  mean increases with difficulty: " << (monotone ? "yes" : "no") << '\n';
      }
    }
  } catch (const UsageError& e) {
    report(err, "usage: ", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    report(err, "", e.what());
    return kExitFailure;
  }
  return kExitOk;
}

}  // namespace sleepguard::cli
