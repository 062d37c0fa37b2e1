#include "cwb/cli.hpp"

#include <csignal>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "cwb/agent.hpp"
#include "cwb/gateway.hpp"

namespace cwb::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Globals {
  std::string config_path;
  std::string server;
  std::string token;
  bool as_json = false;
};

class Api {
 public:
  Api(std::string base, std::string token) : transport_(base), token_(std::move(token)) {}

  json call(const std::string& method, const std::string& path, const std::string& body = {},
            const std::string& content_type = "application/json") {
    agent::Request req{method, path, body, content_type, {}};
    req.headers["Authorization"] = "Bearer " + token_;
    auto resp = transport_.send(req);
    if (resp.status < 200 || resp.status >= 300) throw agent::rejection(resp);
    if (resp.body.empty()) return json();
    auto doc = json::parse(resp.body, nullptr, false);
    return doc.is_discarded() ? json(resp.body) : doc;
  }

  std::string raw(const std::string& path) {
    agent::Request req{"GET", path, {}, "text/plain", {}};
    req.headers["Authorization"] = "Bearer " + token_;
    auto resp = transport_.send(req);
    if (resp.status < 200 || resp.status >= 300) throw agent::rejection(resp);
    return resp.body;
  }

 private:
  agent::HttpTransport transport_;
  std::string token_;
};

Api connect(const Globals& g) {
  std::string server = g.server, token = g.token;
  auto env = gateway::process_env();
  if (!g.config_path.empty()) {
    auto cfg = gateway::load_config(g.config_path, env);
    if (server.empty()) {
      std::string host = cfg.host == "0.0.0.0" ? "127.0.0.1" : cfg.host;
      server = "http://" + host + ":" + std::to_string(cfg.port);
    }
    if (token.empty()) token = cfg.operator_token;
  }
  if (server.empty()) server = env.contains("CWB_SERVER") ? env["CWB_SERVER"] : "http://127.0.0.1:8080";
  if (token.empty() && env.contains("CWB_OPERATOR_TOKEN")) token = env["CWB_OPERATOR_TOKEN"];
  return Api(server, token);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::BadRequest, "cannot read " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void table(std::ostream& out, const std::vector<std::string>& header,
           const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width(header.size());
  for (std::size_t i = 0; i < header.size(); ++i) width[i] = header[i].size();
  for (const auto& r : rows)
    for (std::size_t i = 0; i < r.size() && i < width.size(); ++i) width[i] = std::max(width[i], r[i].size());
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i + 1 == cells.size())
        out << cells[i];
      else
        out << std::left << std::setw(static_cast<int>(width[i] + 2)) << cells[i];
    }
    out << "\n";
  };
  line(header);
  for (const auto& r : rows) line(r);
}

std::string text(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_null()) return "-";
  return v.dump();
}

void show_execution(std::ostream& out, const json& v) {
  out << "id:       " << text(v["id"]) << "\n"
      << "benchmark: " << text(v["benchmark_id"]) << "\n"
      << "status:   " << text(v["displayed_status"]) << (v.value("dev_mode", false) ? " (dev mode)" : "") << "\n"
      << "created:  " << text(v["created_at"]) << "\n";
  if (v.contains("events")) {
    out << "events:\n";
    for (const auto& e : v["events"]) out << "  " << text(e["at"]) << "  " << text(e["event"]) << "\n";
  }
}

int serve(const Globals& g, std::ostream& out) {
  if (g.config_path.empty()) throw Error(Errc::BadConfig, "serve needs --config");
  auto cfg = gateway::load_config(g.config_path, gateway::process_env());
  bool generated = cfg.operator_token.empty();

  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  gateway::Service service(cfg);
  service.start();
  out << "listening on " << service.base_url() << std::endl;
  if (generated) out << "operator token: " << service.config().operator_token << std::endl;

  int sig = 0;
  sigwait(&signals, &sig);
  out << "shutting down" << std::endl;
  service.stop();
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"cwb: cloud benchmark orchestration"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "Server configuration file");
  app.add_option("--server", g.server, "Server base URL (default from --config, CWB_SERVER or localhost:8080)");
  app.add_option("--token", g.token, "Operator token (default from --config or CWB_OPERATOR_TOKEN)");
  app.add_flag("--json", g.as_json, "Print JSON instead of tables");

  auto* serve_cmd = app.add_subcommand("serve", "Run the server");

  auto* bench = app.add_subcommand("benchmark", "Manage benchmark definitions");
  bench->require_subcommand(1);
  std::string file, id, metric;
  auto* b_create = bench->add_subcommand("create", "Create a benchmark from a definition file");
  b_create->add_option("-f,--file", file)->required();
  auto* b_list = bench->add_subcommand("list", "List benchmarks");
  auto* b_show = bench->add_subcommand("show", "Show one benchmark");
  b_show->add_option("id", id)->required();
  auto* b_clone = bench->add_subcommand("clone", "Clone a benchmark with overrides");
  b_clone->add_option("id", id)->required();
  std::vector<std::string> sets;
  b_clone->add_option("--set", sets, "JSON pointer override, e.g. /vms/0/instance_type=m3.medium");

  auto* exec = app.add_subcommand("exec", "Trigger and steer executions");
  exec->require_subcommand(1);
  auto* e_trigger = exec->add_subcommand("trigger", "Start an execution of a benchmark");
  e_trigger->add_option("benchmark", id)->required();
  auto* e_list = exec->add_subcommand("list", "List executions");
  std::string f_state, f_bench, f_from, f_to;
  e_list->add_option("--state", f_state);
  e_list->add_option("--benchmark", f_bench);
  e_list->add_option("--from", f_from);
  e_list->add_option("--to", f_to);
  auto* e_show = exec->add_subcommand("show", "Show an execution");
  e_show->add_option("id", id)->required();
  auto* e_log = exec->add_subcommand("log", "Print execution log lines");
  e_log->add_option("id", id)->required();
  std::int64_t after = 0;
  bool follow = false;
  e_log->add_option("--after", after);
  e_log->add_flag("--follow", follow, "Keep polling until the execution is terminal");
  auto* e_dev = exec->add_subcommand("dev-mode", "Enter or leave development mode");
  e_dev->add_option("id", id)->required();
  std::string on_off;
  e_dev->add_option("mode", on_off)->required()->check(CLI::IsMember({"on", "off"}));
  auto* e_repro = exec->add_subcommand("reprovision", "Re-run provisioning in development mode");
  e_repro->add_option("id", id)->required();
  auto* e_release = exec->add_subcommand("release", "Release resources now");
  e_release->add_option("id", id)->required();
  auto* e_results = exec->add_subcommand("results", "Export observations as CSV");
  e_results->add_option("id", id)->required();
  e_results->add_option("--metric", metric);

  auto* stats = app.add_subcommand("stats", "Result statistics");
  stats->require_subcommand(1);
  auto* s_var = stats->add_subcommand("variability", "Coefficient of variation across and within executions");
  s_var->add_option("benchmark", id)->required();
  s_var->add_option("metric", metric)->required();

  auto* rec = app.add_subcommand("recipes", "Provisioning recipes");
  rec->require_subcommand(1);
  auto* r_list = rec->add_subcommand("list", "List recipes");
  auto* r_show = rec->add_subcommand("show", "Show a recipe");
  r_show->add_option("ref", id)->required();
  auto* r_add = rec->add_subcommand("add", "Upload a recipe");
  r_add->add_option("-f,--file", file)->required();

  std::vector<std::string> argv_store{"cwb"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  auto emit = [&](const json& doc, const std::function<void()>& human) {
    if (g.as_json)
      out << doc.dump(2) << "\n";
    else
      human();
  };

  try {
    if (*serve_cmd) return serve(g, out);
    auto api = connect(g);

    if (*b_create) {
      auto doc = api.call("POST", "/api/benchmarks", read_file(file));
      emit(doc, [&] { out << text(doc["id"]) << "\n"; });
    } else if (*b_list) {
      auto doc = api.call("GET", "/api/benchmarks");
      emit(doc, [&] {
        std::vector<std::vector<std::string>> rows;
        for (const auto& b : doc)
          rows.push_back({text(b["id"]), text(b["name"]), std::to_string(b["vms"].size()), text(b["schedule"]),
                          b.value("active", true) ? "yes" : "no"});
        table(out, {"ID", "NAME", "VMS", "SCHEDULE", "ACTIVE"}, rows);
      });
    } else if (*b_show) {
      auto doc = api.call("GET", "/api/benchmarks/" + id);
      out << doc.dump(2) << "\n";
    } else if (*b_clone) {
      json overrides = json::object();
      for (const auto& s : sets) {
        auto eq = s.find('=');
        if (eq == std::string::npos) throw Error(Errc::BadRequest, "--set expects POINTER=VALUE: " + s);
        auto raw = s.substr(eq + 1);
        auto v = json::parse(raw, nullptr, false);
        overrides[s.substr(0, eq)] = v.is_discarded() ? json(raw) : v;
      }
      auto doc = api.call("POST", "/api/benchmarks/" + id + "/clone", json{{"overrides", overrides}}.dump());
      emit(doc, [&] { out << text(doc["id"]) << "\n"; });
    } else if (*e_trigger) {
      auto doc = api.call("POST", "/api/benchmarks/" + id + "/executions");
      emit(doc, [&] { out << text(doc["id"]) << "\n"; });
    } else if (*e_list) {
      std::string q;
      auto add = [&](const char* k, const std::string& v) {
        if (v.empty()) return;
        q += (q.empty() ? "?" : "&") + std::string(k) + "=" + v;
      };
      add("state", f_state);
      add("benchmark", f_bench);
      add("from", f_from);
      add("to", f_to);
      auto doc = api.call("GET", "/api/executions" + q);
      emit(doc, [&] {
        std::vector<std::vector<std::string>> rows;
        for (const auto& e : doc)
          rows.push_back({text(e["id"]), text(e["benchmark_id"]), text(e["displayed_status"]),
                          text(e["cause"]), text(e["created_at"])});
        table(out, {"ID", "BENCHMARK", "STATUS", "CAUSE", "CREATED"}, rows);
      });
    } else if (*e_show) {
      auto doc = api.call("GET", "/api/executions/" + id);
      emit(doc, [&] { show_execution(out, doc); });
    } else if (*e_log) {
      while (true) {
        auto doc = api.call("GET", "/api/executions/" + id + "/log?after=" + std::to_string(after));
        for (const auto& l : doc["lines"]) {
          if (g.as_json)
            out << l.dump() << "\n";
          else
            out << text(l["at"]) << "  " << text(l["text"]) << "\n";
        }
        after = doc["cursor"].get<std::int64_t>();
        if (!follow) break;
        if (api.call("GET", "/api/executions/" + id).value("terminal", false) && doc["lines"].empty()) break;
        out.flush();
        std::this_thread::sleep_for(std::chrono::seconds(2));
      }
    } else if (*e_dev) {
      auto doc = api.call(on_off == "on" ? "POST" : "DELETE", "/api/executions/" + id + "/dev_mode");
      emit(doc, [&] { show_execution(out, doc); });
    } else if (*e_repro) {
      auto doc = api.call("POST", "/api/executions/" + id + "/reprovision");
      emit(doc, [&] {
        for (const auto& s : doc["report"]["steps"])
          out << text(s["recipe"]) << " #" << text(s["index"]) << " " << text(s["kind"]) << ": "
              << text(s["outcome"]) << "\n";
        out << "status: " << text(doc["execution"]["displayed_status"]) << "\n";
      });
    } else if (*e_release) {
      auto doc = api.call("POST", "/api/executions/" + id + "/release");
      emit(doc, [&] { out << text(doc["displayed_status"]) << "\n"; });
    } else if (*e_results) {
      std::string path = "/api/executions/" + id + "/observations?format=" + (g.as_json ? "json" : "csv");
      if (!metric.empty()) path += "&metric=" + metric;
      if (g.as_json)
        out << api.call("GET", path).dump(2) << "\n";
      else
        out << api.raw(path);
    } else if (*s_var) {
      auto doc = api.call("GET", "/api/benchmarks/" + id + "/metrics/" + metric + "/variability");
      emit(doc, [&] {
        table(out, {"BENCHMARK", "EXECUTIONS", "CV"},
              {{text(doc["label"]), std::to_string(doc["executions"].get<std::size_t>()), text(doc["rendered"])}});
      });
    } else if (*r_list) {
      auto doc = api.call("GET", "/api/recipes");
      emit(doc, [&] {
        std::vector<std::vector<std::string>> rows;
        for (const auto& r : doc)
          rows.push_back({text(r["name"]) + "@" + text(r["version"]), std::to_string(r["steps"].size())});
        table(out, {"RECIPE", "STEPS"}, rows);
      });
    } else if (*r_show) {
      out << api.call("GET", "/api/recipes/" + id).dump(2) << "\n";
    } else if (*r_add) {
      auto doc = api.call("POST", "/api/recipes", read_file(file));
      emit(doc, [&] { out << text(doc["name"]) << "@" << text(doc["version"]) << "\n"; });
    }
    return 0;
  } catch (const Error& e) {
    err << gateway::error_body(e).dump() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << json{{"error", {{"code", "Internal"}, {"detail", e.what()}}}}.dump() << "\n";
    return 1;
  }
}

}  // namespace cwb::cli
