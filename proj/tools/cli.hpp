#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace tubenerf::cli {

enum ExitCode : int { ok = 0, usage = 1, data = 2, numeric = 3 };

/// Bad flags or an unusable config file.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Missing or malformed inputs on disk.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Environment variable naming the config file used when --config is absent.
inline constexpr const char* kConfigEnv = "TUBENERF_CONFIG";

/// Entry point. args excludes the program name.
int run(const std::vector<std::string>& args);

}  // namespace tubenerf::cli
