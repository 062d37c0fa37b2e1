#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cwb/definition.hpp"
#include "cwb/local_driver.hpp"
#include "cwb/simulated_driver.hpp"

namespace cwb::gateway {

struct ClockConfig {
  bool simulated = false;
  std::optional<Instant> start;  // simulated only; defaults to the wall clock
  double rate = 1;               // simulated seconds per real second
};

struct Config {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  /// Endpoint agents report to; derived from host and port when empty.
  std::string public_url;
  std::string database = "cwb.db";
  std::string operator_token;
  std::filesystem::path recipes_dir;
  std::size_t max_preparing = 4;
  std::size_t max_postprocessing = 4;
  std::size_t workers = 8;
  model::DefinitionDefaults defaults;
  ClockConfig clock;
  std::optional<providers::FaultPlan> simulated = providers::FaultPlan{};
  std::optional<providers::LocalDriverOptions> local = providers::LocalDriverOptions{};
};

using EnvMap = std::map<std::string, std::string>;

/// Parses a JSON config document. Relative paths resolve against `base_dir`.
/// Values from CWB_HOST, CWB_PORT, CWB_PUBLIC_URL, CWB_DATABASE,
/// CWB_OPERATOR_TOKEN and CWB_RECIPES_DIR in `env` take precedence. Throws
/// BadConfig naming the line or field at fault.
Config parse_config(const std::string& text, const EnvMap& env = {},
                    const std::filesystem::path& base_dir = {});
Config load_config(const std::filesystem::path& path, const EnvMap& env);

/// CWB_* variables of the current process.
EnvMap process_env();

}  // namespace cwb::gateway
