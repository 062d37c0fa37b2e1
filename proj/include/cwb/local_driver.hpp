#pragma once

#include <filesystem>
#include <map>
#include <mutex>
#include <vector>

#include <sys/types.h>

#include "cwb/driver.hpp"
#include "cwb/subprocess.hpp"

namespace cwb::providers {

struct LocalDriverOptions {
  std::filesystem::path root;  // sandboxes live below; empty = fresh temp dir
  std::chrono::seconds command_timeout{600};
  std::vector<std::string> extra_path;  // prepended to PATH inside sandboxes
  std::size_t max_payload_bytes = 64u << 20;
  std::size_t max_vms = 0;  // 0 = unlimited
};

/// "VMs" are sandbox directories on the local machine. Commands run through
/// /bin/sh with the sandbox as working directory, HOME and CWB_ROOT, and a
/// minimal environment. Resource-relative paths ("/cwb/runner") map to
/// <sandbox>/cwb/runner.
class LocalDriver final : public Driver {
 public:
  explicit LocalDriver(LocalDriverOptions options);
  ~LocalDriver() override;

  std::string id() const override { return "local"; }
  std::vector<ResourceHandle> acquire(const model::VmSpec& spec,
                                      const std::string& owner) override;
  std::optional<ResourceHandle> poll_ready(const std::string& handle_id) override;
  std::optional<Instant> ready_at(const std::string& handle_id) const override;
  ExecResult exec(const std::string& handle_id, const std::string& command,
                  ExecMode mode) override;
  SyncReport sync(const std::string& handle_id, const std::vector<Payload>& files) override;
  void release(const std::string& handle_id) override;
  std::optional<ResourceHandle> find(const std::string& handle_id) const override;
  std::vector<ResourceHandle> outstanding() const override;
  void adopt(const ResourceHandle& handle) override;

  std::filesystem::path sandbox(const std::string& handle_id) const;
  const std::filesystem::path& root() const { return options_.root; }

  /// Order-independent digest of every file (path, mode, content) below the
  /// handle's sandbox.
  std::string content_hash(const std::string& handle_id) const;

 private:
  struct Slot {
    ResourceHandle handle;
    std::filesystem::path dir;
    std::vector<pid_t> processes;
  };

  Slot& live(const std::string& handle_id);
  proc::Environment environment(const Slot& s) const;

  LocalDriverOptions options_;
  bool owns_root_ = false;
  mutable std::mutex mu_;
  std::uint64_t seq_ = 0;
  std::map<std::string, Slot> slots_;
};

std::string hash_directory(const std::filesystem::path& dir);

}  // namespace cwb::providers
