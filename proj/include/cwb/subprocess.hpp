#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <sys/types.h>

namespace cwb::proc {

struct RunResult {
  int exit_code = 0;
  bool timed_out = false;
  std::string out;
  std::string err;
};

using Environment = std::map<std::string, std::string>;

/// Runs argv to completion in its own process group, capturing output. On
/// timeout the whole group is killed and timed_out is set.
RunResult run(const std::vector<std::string>& argv, const std::filesystem::path& cwd,
              const Environment& env, std::chrono::milliseconds timeout);

/// Starts argv in a new session with stdout/stderr appended to `log`. Returns
/// the child pid (also its process group id).
pid_t spawn(const std::vector<std::string>& argv, const std::filesystem::path& cwd,
            const Environment& env, const std::filesystem::path& log);

/// Reaps the child if it exited; returns its exit code then.
std::optional<int> try_reap(pid_t pid);

/// SIGKILLs the process group and reaps the leader.
void kill_group(pid_t pid);

}  // namespace cwb::proc
