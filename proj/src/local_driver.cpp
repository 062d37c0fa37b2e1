#include "cwb/local_driver.hpp"

#include <sys/stat.h>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "cwb/error.hpp"

namespace cwb::providers {

namespace fs = std::filesystem;

namespace {

std::string read_all(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Rejects absolute escapes and ".." so payloads stay inside the sandbox.
fs::path resolve(const fs::path& dir, const std::string& resource_path) {
  fs::path rel = fs::path(resource_path).relative_path();
  for (const auto& part : rel)
    if (part == "..") throw Error(Errc::BadRequest, "path escapes sandbox: " + resource_path);
  if (rel.empty()) throw Error(Errc::BadRequest, "empty payload path");
  return dir / rel;
}

std::uint64_t fnv1a(std::uint64_t h, std::string_view data) {
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace

std::string hash_directory(const fs::path& dir) {
  std::vector<std::pair<std::string, fs::path>> files;
  if (fs::exists(dir))
    for (const auto& e : fs::recursive_directory_iterator(dir))
      if (e.is_regular_file()) files.emplace_back(fs::relative(e.path(), dir).generic_string(), e.path());
  std::sort(files.begin(), files.end());
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& [rel, path] : files) {
    auto perms = fs::status(path).permissions();
    bool exec = (perms & fs::perms::owner_exec) != fs::perms::none;
    h = fnv1a(h, rel);
    h = fnv1a(h, exec ? "x" : "-");
    auto content = read_all(path);
    h = fnv1a(h, std::to_string(content.size()));
    h = fnv1a(h, content);
  }
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

LocalDriver::LocalDriver(LocalDriverOptions options) : options_(std::move(options)) {
  if (options_.root.empty()) {
    std::string tmpl = (fs::temp_directory_path() / "cwb-local-XXXXXX").string();
    if (!mkdtemp(tmpl.data())) throw Error(Errc::ProviderUnavailable, "cannot create sandbox root");
    options_.root = tmpl;
    owns_root_ = true;
  }
  std::error_code ec;
  fs::create_directories(options_.root, ec);
  if (ec) throw Error(Errc::ProviderUnavailable, "cannot create " + options_.root.string() + ": " + ec.message());
}

LocalDriver::~LocalDriver() {
  std::lock_guard lock(mu_);
  for (auto& [id, s] : slots_)
    for (auto pid : s.processes) proc::kill_group(pid);
  if (owns_root_) {
    std::error_code ec;
    fs::remove_all(options_.root, ec);
  }
}

std::vector<ResourceHandle> LocalDriver::acquire(const model::VmSpec& spec,
                                                 const std::string& owner) {
  std::lock_guard lock(mu_);
  if (options_.max_vms > 0) {
    std::size_t live = 0;
    for (const auto& [id, s] : slots_)
      live += s.handle.kind == ResourceKind::Vm && s.handle.status != ResourceStatus::Released;
    if (live >= options_.max_vms) throw Error(Errc::QuotaExceeded, "local sandbox quota reached");
  }
  auto next_id = [&] {
    while (true) {
      char id[32];
      std::snprintf(id, sizeof id, "loc-%06llu", static_cast<unsigned long long>(++seq_));
      if (!fs::exists(options_.root / id) && !slots_.contains(id)) return std::string(id);
    }
  };

  std::vector<ResourceHandle> out;
  Slot vm;
  vm.handle.id = next_id();
  vm.handle.provider = "local";
  vm.handle.role = spec.role;
  vm.handle.kind = ResourceKind::Vm;
  vm.handle.owner = owner;
  vm.dir = options_.root / vm.handle.id;
  std::error_code ec;
  fs::create_directories(vm.dir / "cwb", ec);
  if (ec) throw Error(Errc::AcquireFailed, "sandbox " + vm.dir.string() + ": " + ec.message());
  vm.handle.endpoint = "local://" + vm.dir.string();
  out.push_back(vm.handle);
  auto vm_dir = vm.dir;
  slots_.emplace(vm.handle.id, std::move(vm));

  for (const auto& [key, value] : spec.extra_resources.items()) {
    Slot extra;
    extra.handle.id = next_id();
    extra.handle.provider = "local";
    extra.handle.role = spec.role;
    extra.handle.kind = key.find("ip") != std::string::npos ? ResourceKind::Address
                                                            : ResourceKind::BlockStorage;
    extra.handle.owner = owner;
    if (extra.handle.kind == ResourceKind::BlockStorage) {
      extra.dir = vm_dir / "volumes" / key;
      fs::create_directories(extra.dir, ec);
      extra.handle.endpoint = "local://" + extra.dir.string();
    } else {
      extra.handle.endpoint = "local://127.0.0.1";
    }
    out.push_back(extra.handle);
    slots_.emplace(extra.handle.id, std::move(extra));
  }
  return out;
}

LocalDriver::Slot& LocalDriver::live(const std::string& handle_id) {
  auto it = slots_.find(handle_id);
  if (it == slots_.end()) throw Error(Errc::ResourceReleased, "unknown handle " + handle_id);
  if (it->second.handle.status == ResourceStatus::Released)
    throw Error(Errc::ResourceReleased, handle_id + " has been released");
  return it->second;
}

std::optional<ResourceHandle> LocalDriver::poll_ready(const std::string& handle_id) {
  std::lock_guard lock(mu_);
  auto& s = live(handle_id);
  s.handle.status = ResourceStatus::Ready;
  return s.handle;
}

std::optional<Instant> LocalDriver::ready_at(const std::string&) const { return std::nullopt; }

proc::Environment LocalDriver::environment(const Slot& s) const {
  std::string path;
  for (const auto& p : options_.extra_path) path += p + ":";
  path += "/usr/local/bin:/usr/bin:/bin";
  return {{"PATH", path},
          {"HOME", s.dir.string()},
          {"CWB_ROOT", s.dir.string()},
          {"LANG", "C"},
          {"TMPDIR", (s.dir / "tmp").string()}};
}

ExecResult LocalDriver::exec(const std::string& handle_id, const std::string& command,
                             ExecMode mode) {
  fs::path dir;
  proc::Environment env;
  {
    std::lock_guard lock(mu_);
    auto& s = live(handle_id);
    if (s.handle.status != ResourceStatus::Ready)
      throw Error(Errc::ConnectionLost, handle_id + " is not ready");
    if (s.handle.kind != ResourceKind::Vm) throw Error(Errc::BadRequest, handle_id + " is not a VM");
    std::erase_if(s.processes, [](pid_t pid) { return proc::try_reap(pid).has_value(); });
    dir = s.dir;
    env = environment(s);
  }
  std::error_code ec;
  fs::create_directories(dir / "tmp", ec);
  std::vector<std::string> argv{"/bin/sh", "-c", command};

  if (mode == ExecMode::FireAndForget) {
    fs::create_directories(dir / "cwb" / "logs", ec);
    auto pid = proc::spawn(argv, dir, env, dir / "cwb" / "logs" / "commands.log");
    std::lock_guard lock(mu_);
    live(handle_id).processes.push_back(pid);
    return {0, "spawned pid " + std::to_string(pid), ""};
  }

  auto r = proc::run(argv, dir, env, options_.command_timeout);
  if (r.timed_out)
    throw Error(Errc::ConnectionLost, "command exceeded " +
                                          std::to_string(options_.command_timeout.count()) + "s: " + command);
  return {r.exit_code, std::move(r.out), std::move(r.err)};
}

SyncReport LocalDriver::sync(const std::string& handle_id, const std::vector<Payload>& files) {
  fs::path dir;
  {
    std::lock_guard lock(mu_);
    auto& s = live(handle_id);
    if (s.handle.status != ResourceStatus::Ready)
      throw Error(Errc::ConnectionLost, handle_id + " is not ready");
    if (s.handle.kind != ResourceKind::Vm) throw Error(Errc::BadRequest, handle_id + " is not a VM");
    dir = s.dir;
  }
  SyncReport report;
  for (const auto& p : files) {
    if (p.content.size() > options_.max_payload_bytes)
      throw Error(Errc::PayloadTooLarge, p.path + " exceeds " + std::to_string(options_.max_payload_bytes) + " bytes");
    auto target = resolve(dir, p.path);
    auto want = p.executable ? fs::perms(0755) : fs::perms(0644);
    if (fs::is_regular_file(target) && read_all(target) == p.content &&
        (fs::status(target).permissions() & fs::perms::all) == want) {
      report.unchanged.push_back(p.path);
      continue;
    }
    std::error_code ec;
    fs::create_directories(target.parent_path(), ec);
    auto tmp = target;
    tmp += ".cwb-partial";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      out << p.content;
      if (!out) throw Error(Errc::ConnectionLost, "write failed: " + target.string());
    }
    fs::permissions(tmp, want, ec);
    fs::rename(tmp, target, ec);
    if (ec) throw Error(Errc::ConnectionLost, "rename failed: " + ec.message());
    report.written.push_back(p.path);
  }
  return report;
}

void LocalDriver::release(const std::string& handle_id) {
  std::lock_guard lock(mu_);
  auto it = slots_.find(handle_id);
  if (it == slots_.end()) throw Error(Errc::ResourceReleased, "unknown handle " + handle_id);
  auto& s = it->second;
  if (s.handle.status == ResourceStatus::Released) return;
  for (auto pid : s.processes) proc::kill_group(pid);
  s.processes.clear();
  if (!s.dir.empty()) {
    std::error_code ec;
    fs::remove_all(s.dir, ec);
    if (ec) throw Error(Errc::ReleaseFailed, "cannot remove " + s.dir.string() + ": " + ec.message());
  }
  s.handle.status = ResourceStatus::Released;
}

std::optional<ResourceHandle> LocalDriver::find(const std::string& handle_id) const {
  std::lock_guard lock(mu_);
  auto it = slots_.find(handle_id);
  if (it == slots_.end()) return std::nullopt;
  return it->second.handle;
}

std::vector<ResourceHandle> LocalDriver::outstanding() const {
  std::lock_guard lock(mu_);
  std::vector<ResourceHandle> out;
  for (const auto& [id, s] : slots_)
    if (s.handle.status != ResourceStatus::Released) out.push_back(s.handle);
  return out;
}

void LocalDriver::adopt(const ResourceHandle& handle) {
  std::lock_guard lock(mu_);
  if (slots_.contains(handle.id)) return;
  Slot s;
  s.handle = handle;
  const std::string prefix = "local://";
  if (handle.endpoint.rfind(prefix, 0) == 0 && handle.kind != ResourceKind::Address)
    s.dir = handle.endpoint.substr(prefix.size());
  slots_.emplace(handle.id, std::move(s));
}

fs::path LocalDriver::sandbox(const std::string& handle_id) const {
  std::lock_guard lock(mu_);
  auto it = slots_.find(handle_id);
  if (it == slots_.end()) throw Error(Errc::ResourceReleased, "unknown handle " + handle_id);
  return it->second.dir;
}

std::string LocalDriver::content_hash(const std::string& handle_id) const {
  return hash_directory(sandbox(handle_id));
}

}  // namespace cwb::providers
