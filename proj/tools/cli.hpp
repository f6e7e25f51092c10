#pragma once

#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "sleepguard/neural.hpp"
#include "sleepguard/physio.hpp"

namespace sleepguard::cli {

// Settings shared by the subcommands. A JSON config file may set any of them;
// command-line flags win over the file.
struct Config {
  std::string data = "data.csv";
  std::string model = "model.json";
  std::string state = "sleepguard-state";
  neural::TrainConfig train;
  double target_bits = 12;
  int window_minutes = 15;
  std::string classifier = "crisp";  // crisp, fuzzy or neural
};

// Throws std::invalid_argument on unknown keys or ill-typed values.
Config config_from_json(const std::string& text, Config base = {});

// Named indicator output for each detected state.
std::string_view indicator_name(StressState s);

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

// `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace sleepguard::cli
