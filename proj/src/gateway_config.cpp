#include "cwb/gateway_config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

extern char** environ;

namespace cwb::gateway {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::size_t line_of(const std::string& text, std::size_t offset) {
  offset = std::min(offset, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<long>(offset), '\n'));
}

class FieldReader {
 public:
  explicit FieldReader(const std::string& text) : text_(text) {}

  [[noreturn]] void fail(const std::string& field, const std::string& why) const {
    std::string where;
    auto key = "\"" + field.substr(field.rfind('.') + 1) + "\"";
    if (auto pos = text_.find(key); pos != std::string::npos)
      where = "line " + std::to_string(line_of(text_, pos)) + ", ";
    throw Error(Errc::BadConfig, where + "field '" + field + "': " + why);
  }

  template <class T>
  void get(const json& obj, const std::string& prefix, const char* name, T& out) const {
    auto it = obj.find(name);
    if (it == obj.end() || it->is_null()) return;
    try {
      out = it->get<T>();
    } catch (const json::exception&) {
      fail(prefix + name, "expected " + expected<T>() + ", got " + it->type_name());
    }
  }

  void check_keys(const json& obj, const std::string& prefix, const std::set<std::string>& known) const {
    if (!obj.is_object()) fail(prefix.empty() ? "(root)" : prefix.substr(0, prefix.size() - 1), "expected object");
    for (const auto& [k, v] : obj.items())
      if (!known.contains(k)) fail(prefix + k, "unknown field");
  }

 private:
  template <class T>
  static std::string expected() {
    if constexpr (std::is_same_v<T, std::string>) return "string";
    else if constexpr (std::is_same_v<T, bool>) return "boolean";
    else if constexpr (std::is_arithmetic_v<T>) return "number";
    else return "array of strings";
  }

  const std::string& text_;
};

fs::path resolve(const fs::path& base, const fs::path& p) {
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return base / p;
}

}  // namespace

Config parse_config(const std::string& text, const EnvMap& env, const fs::path& base_dir) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(Errc::BadConfig, "line " + std::to_string(line_of(text, e.byte == 0 ? 0 : e.byte - 1)) +
                                     ": malformed JSON");
  }
  FieldReader r(text);
  r.check_keys(doc, "",
               {"host", "port", "public_url", "database", "operator_token", "recipes_dir", "max_preparing",
                "max_postprocessing", "workers", "defaults", "clock", "providers"});

  Config c;
  r.get(doc, "", "host", c.host);
  r.get(doc, "", "port", c.port);
  r.get(doc, "", "public_url", c.public_url);
  r.get(doc, "", "database", c.database);
  r.get(doc, "", "operator_token", c.operator_token);
  std::string recipes;
  r.get(doc, "", "recipes_dir", recipes);
  c.recipes_dir = recipes;
  r.get(doc, "", "max_preparing", c.max_preparing);
  r.get(doc, "", "max_postprocessing", c.max_postprocessing);
  r.get(doc, "", "workers", c.workers);

  if (auto it = doc.find("defaults"); it != doc.end()) {
    r.check_keys(*it, "defaults.", {"timeout_minutes", "release_grace_minutes"});
    long timeout = c.defaults.timeout.count(), grace = c.defaults.release_grace.count();
    r.get(*it, "defaults.", "timeout_minutes", timeout);
    r.get(*it, "defaults.", "release_grace_minutes", grace);
    if (timeout <= 0) r.fail("defaults.timeout_minutes", "must be positive");
    if (grace < 0) r.fail("defaults.release_grace_minutes", "must not be negative");
    c.defaults.timeout = Minutes{timeout};
    c.defaults.release_grace = Minutes{grace};
  }

  if (auto it = doc.find("clock"); it != doc.end()) {
    r.check_keys(*it, "clock.", {"mode", "start", "rate"});
    std::string mode = "real", start;
    r.get(*it, "clock.", "mode", mode);
    r.get(*it, "clock.", "start", start);
    r.get(*it, "clock.", "rate", c.clock.rate);
    if (mode != "real" && mode != "simulated") r.fail("clock.mode", "must be \"real\" or \"simulated\"");
    c.clock.simulated = mode == "simulated";
    if (!(c.clock.rate > 0)) r.fail("clock.rate", "must be positive");
    if (!start.empty()) {
      try {
        c.clock.start = parse_instant(start);
      } catch (const std::exception&) {
        r.fail("clock.start", "not an ISO-8601 UTC instant");
      }
    }
    if (!c.clock.simulated && (c.clock.start || c.clock.rate != 1))
      r.fail("clock.mode", "start and rate need mode \"simulated\"");
  }

  if (auto it = doc.find("providers"); it != doc.end()) {
    r.check_keys(*it, "providers.", {"simulated", "local"});
    c.simulated.reset();
    c.local.reset();
    if (auto sim = it->find("simulated"); sim != it->end() && !sim->is_null()) {
      if (!sim->is_object()) r.fail("providers.simulated", "expected object");
      providers::FaultPlan plan;
      try {
        from_json(*sim, plan);
        plan.validate();
      } catch (const json::exception& e) {
        r.fail("providers.simulated", e.what());
      } catch (const Error& e) {
        r.fail("providers.simulated", e.detail());
      }
      c.simulated = plan;
    }
    if (auto loc = it->find("local"); loc != it->end() && !loc->is_null()) {
      r.check_keys(*loc, "providers.local.", {"root", "extra_path", "command_timeout_seconds", "max_vms"});
      providers::LocalDriverOptions opts;
      std::string root;
      long timeout = opts.command_timeout.count();
      r.get(*loc, "providers.local.", "root", root);
      r.get(*loc, "providers.local.", "extra_path", opts.extra_path);
      r.get(*loc, "providers.local.", "command_timeout_seconds", timeout);
      r.get(*loc, "providers.local.", "max_vms", opts.max_vms);
      opts.root = resolve(base_dir, root);
      // Sandboxed commands run elsewhere, so PATH entries must be absolute.
      for (auto& p : opts.extra_path) p = fs::absolute(resolve(base_dir, p)).string();
      opts.command_timeout = std::chrono::seconds(timeout);
      c.local = opts;
    }
  }

  auto env_get = [&](const char* k) -> std::optional<std::string> {
    auto it = env.find(k);
    if (it == env.end()) return std::nullopt;
    return it->second;
  };
  if (auto v = env_get("CWB_HOST")) c.host = *v;
  if (auto v = env_get("CWB_PORT")) {
    try {
      std::size_t used = 0;
      c.port = std::stoi(*v, &used);
      if (used != v->size()) throw std::invalid_argument(*v);
    } catch (const std::exception&) {
      throw Error(Errc::BadConfig, "field 'port' (CWB_PORT): not an integer");
    }
  }
  if (auto v = env_get("CWB_PUBLIC_URL")) c.public_url = *v;
  if (auto v = env_get("CWB_DATABASE")) c.database = *v;
  if (auto v = env_get("CWB_OPERATOR_TOKEN")) c.operator_token = *v;
  if (auto v = env_get("CWB_RECIPES_DIR")) c.recipes_dir = *v;

  if (c.port < 0 || c.port > 65535) r.fail("port", "must be between 0 and 65535");
  if (c.workers == 0) r.fail("workers", "must be positive");
  if (c.max_preparing == 0) r.fail("max_preparing", "must be positive");
  if (c.max_postprocessing == 0) r.fail("max_postprocessing", "must be positive");
  if (!c.simulated && !c.local) r.fail("providers", "no provider enabled");
  if (c.database != ":memory:") c.database = resolve(base_dir, c.database).string();
  c.recipes_dir = resolve(base_dir, c.recipes_dir);
  return c;
}

Config load_config(const fs::path& path, const EnvMap& env) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::BadConfig, "cannot read " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), env, fs::absolute(path).parent_path());
}

EnvMap process_env() {
  EnvMap out;
  for (char** e = environ; e && *e; ++e) {
    std::string_view kv(*e);
    if (!kv.starts_with("CWB_")) continue;
    auto eq = kv.find('=');
    if (eq == std::string_view::npos) continue;
    out.emplace(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return out;
}

}  // namespace cwb::gateway
