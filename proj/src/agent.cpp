#include "cwb/agent.hpp"

#include <algorithm>
#include <cerrno>
#include <fstream>
#include <sstream>
#include <thread>

#include <sys/wait.h>
#include <unistd.h>

#include <httplib.h>

namespace cwb::agent {

namespace fs = std::filesystem;
using nlohmann::json;

AgentConfig parse_config(const json& doc) {
  if (!doc.is_object()) throw Error(Errc::BadConfig, "agent config must be an object");
  AgentConfig c;
  auto field = [&](const char* name, std::string& out) {
    auto it = doc.find(name);
    if (it == doc.end() || !it->is_string() || it->get<std::string>().empty())
      throw Error(Errc::BadConfig, std::string("agent config field '") + name + "' missing");
    out = it->get<std::string>();
  };
  field("server", c.server);
  field("execution_id", c.execution_id);
  field("token", c.token);
  field("role", c.role);
  return c;
}

AgentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::BadConfig, "cannot read " + path.string());
  try {
    return parse_config(json::parse(in));
  } catch (const json::parse_error& e) {
    throw Error(Errc::BadConfig, path.string() + ": " + e.what());
  }
}

HttpTransport::HttpTransport(std::string base_url, std::chrono::seconds timeout)
    : base_url_(std::move(base_url)), timeout_(timeout) {
  while (!base_url_.empty() && base_url_.back() == '/') base_url_.pop_back();
}

Response HttpTransport::send(const Request& req) {
  httplib::Client cli(base_url_);
  cli.set_connection_timeout(timeout_);
  cli.set_read_timeout(timeout_);
  cli.set_write_timeout(timeout_);
  httplib::Headers headers(req.headers.begin(), req.headers.end());
  httplib::Result res;
  if (req.method == "GET")
    res = cli.Get(req.path, headers);
  else if (req.method == "PUT")
    res = cli.Put(req.path, headers, req.body, req.content_type);
  else if (req.method == "DELETE")
    res = cli.Delete(req.path, headers, req.body, req.content_type);
  else
    res = cli.Post(req.path, headers, req.body, req.content_type);
  if (!res) throw Error(Errc::Transport, base_url_ + ": " + httplib::to_string(res.error()));
  return {res->status, res->body};
}

std::chrono::milliseconds backoff(const RetryPolicy& p, int retry, std::mt19937_64& rng) {
  double nominal = static_cast<double>(p.initial.count());
  for (int i = 1; i < retry; ++i) nominal *= p.factor;
  std::uniform_real_distribution<double> spread(1.0 - p.jitter, 1.0 + p.jitter);
  return std::chrono::milliseconds(static_cast<std::int64_t>(nominal * spread(rng)));
}

Error rejection(const Response& r) {
  try {
    auto doc = json::parse(r.body);
    const auto& err = doc.at("error");
    auto code = parse_errc(err.at("code").get<std::string>());
    if (code) return Error(*code, err.value("detail", std::string()));
  } catch (const json::exception&) {
  }
  switch (r.status) {
    case 401: return Error(Errc::Unauthorized, "server rejected the execution token");
    case 404: return Error(Errc::ExecutionNotFound, "server does not know this execution");
    case 409: return Error(Errc::Conflict, r.body);
    default: return Error(Errc::BadRequest, "HTTP " + std::to_string(r.status) + ": " + r.body);
  }
}

Client::Client(AgentConfig config, Transport& transport, fs::path spool_dir, RetryPolicy policy,
               Sleeper sleeper, LogSink log, std::uint64_t seed)
    : config_(std::move(config)),
      transport_(transport),
      spool_dir_(std::move(spool_dir)),
      policy_(policy),
      sleeper_(std::move(sleeper)),
      log_(std::move(log)),
      rng_(seed) {
  if (policy_.attempts < 1) policy_.attempts = 1;
  if (!sleeper_) sleeper_ = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
  if (!log_) log_ = [](const std::string&) {};
}

Request Client::base(std::string method, std::string path) const {
  Request r;
  r.method = std::move(method);
  r.path = "/agent/executions/" + config_.execution_id + path;
  return r;
}

Response Client::attempt_all(const Request& req) {
  Request wire = req;
  wire.headers["Authorization"] = "Bearer " + config_.token;
  std::string last;
  for (int attempt = 1; attempt <= policy_.attempts; ++attempt) {
    try {
      auto resp = transport_.send(wire);
      if (resp.status < 500) return resp;
      last = "HTTP " + std::to_string(resp.status);
    } catch (const Error& e) {
      if (e.code() != Errc::Transport) throw;
      last = e.detail();
    }
    log_(req.method + " " + req.path + " attempt " + std::to_string(attempt) + "/" +
         std::to_string(policy_.attempts) + " failed: " + last);
    if (attempt < policy_.attempts) sleeper_(backoff(policy_, attempt, rng_));
  }
  throw Error(Errc::Transport, "gave up after " + std::to_string(policy_.attempts) + " attempts: " + last);
}

Response Client::deliver(Request req) {
  Response resp;
  try {
    resp = attempt_all(req);
  } catch (const Error& e) {
    if (e.code() != Errc::Transport) throw;
    spool(req);
    throw;
  }
  if (resp.status >= 200 && resp.status < 300) return resp;
  auto err = rejection(resp);
  log_(req.method + " " + req.path + " rejected: " + err.what());
  throw err;
}

void Client::spool(const Request& req) {
  json doc = {{"method", req.method},
              {"path", req.path},
              {"content_type", req.content_type},
              {"body", req.body},
              {"headers", req.headers}};
  std::error_code ec;
  fs::create_directories(spool_dir_, ec);
  auto stamp = std::chrono::duration_cast<std::chrono::milliseconds>(
                   std::chrono::system_clock::now().time_since_epoch())
                   .count();
  std::ostringstream name;
  name << stamp << "-" << ::getpid() << "-" << spooled_++ << ".json";
  auto path = spool_dir_ / name.str();
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp);
    out << doc.dump(2) << "\n";
    if (!out) {
      log_("could not write spool file " + path.string());
      return;
    }
  }
  fs::rename(tmp, path, ec);
  log_("spooled " + req.method + " " + req.path + " to " + path.string());
}

Ack Client::notify(fsm::ExecutionEvent event) {
  auto req = base("PUT", "/state");
  req.body = json{{"event", fsm::to_string(event)}}.dump();
  auto doc = json::parse(deliver(req).body);
  Ack ack{doc.value("displayed_status", std::string()), doc.value("state", std::string()),
          doc.value("duplicate", false)};
  log_(std::string(fsm::to_string(event)) + " acknowledged: " + ack.displayed_status +
       (ack.duplicate ? " (duplicate ignored)" : ""));
  return ack;
}

namespace {

std::string random_id(std::mt19937_64& rng) {
  std::ostringstream s;
  s << std::hex << rng() << rng();
  return s.str();
}

BatchAck batch_ack(const Response& r) {
  auto doc = json::parse(r.body);
  return {doc.value("count", std::size_t{0}), doc.value("duplicate", false)};
}

}  // namespace

BatchAck Client::submit(const std::string& metric, const json& value, std::optional<std::int64_t> offset_ms) {
  auto req = base("POST", "/metrics");
  json body = {{"metric", metric}, {"value", value}, {"submission_id", random_id(rng_)}};
  if (offset_ms) body["offset_ms"] = *offset_ms;
  req.body = body.dump();
  return batch_ack(deliver(req));
}

BatchAck Client::submit_csv(const std::string& csv, const std::string& batch_id) {
  auto req = base("POST", "/metrics/csv");
  req.body = csv;
  req.content_type = "text/csv";
  req.headers["X-Batch-Id"] = batch_id;
  auto ack = batch_ack(deliver(req));
  log_("batch " + batch_id + ": " + std::to_string(ack.count) + " observations" +
       (ack.duplicate ? " (duplicate ignored)" : ""));
  return ack;
}

std::size_t Client::flush_spool() {
  std::error_code ec;
  if (!fs::is_directory(spool_dir_, ec)) return 0;
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(spool_dir_))
    if (e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::size_t delivered = 0;
  for (const auto& f : files) {
    std::ifstream in(f);
    auto doc = json::parse(in, nullptr, false);
    if (doc.is_discarded()) {
      log_("skipping unreadable spool file " + f.string());
      continue;
    }
    Request req;
    req.method = doc.value("method", std::string("POST"));
    req.path = doc.value("path", std::string());
    req.content_type = doc.value("content_type", std::string("application/json"));
    req.body = doc.value("body", std::string());
    req.headers = doc.value("headers", std::map<std::string, std::string>{});
    Response resp;
    try {
      resp = attempt_all(req);
    } catch (const Error& e) {
      if (e.code() != Errc::Transport) throw;
      log_("server still unreachable; " + std::to_string(files.size() - delivered) + " spooled requests kept");
      return delivered;
    }
    if (resp.status >= 200 && resp.status < 300)
      ++delivered;
    else
      log_("spooled " + req.method + " " + req.path + " rejected: " + rejection(resp).what());
    fs::remove(f, ec);
  }
  return delivered;
}

namespace {

int run_script(const fs::path& script, const fs::path& root) {
  pid_t pid = ::fork();
  if (pid < 0) return 127;
  if (pid == 0) {
    ::setenv("CWB_ROOT", root.c_str(), 1);
    auto dir = root / "cwb";
    if (::chdir(dir.c_str()) != 0 && ::chdir(root.c_str()) != 0) ::_exit(126);
    ::execl("/bin/sh", "sh", script.c_str(), static_cast<char*>(nullptr));
    ::_exit(127);
  }
  int status = 0;
  while (::waitpid(pid, &status, 0) < 0)
    if (errno != EINTR) return 127;
  if (WIFEXITED(status)) return WEXITSTATUS(status);
  return 128 + (WIFSIGNALED(status) ? WTERMSIG(status) : 0);
}

// Notifies and converts any failure into a non-zero agent exit code.
int report(Client& client, fsm::ExecutionEvent ev, int ok_code, const LogSink& log) {
  try {
    client.notify(ev);
    return ok_code;
  } catch (const Error& e) {
    log(std::string("could not report ") + std::string(fsm::to_string(ev)) + ": " + e.what());
    return e.code() == Errc::Transport ? 3 : 2;
  }
}

}  // namespace

int run_callback(Client& client, const fs::path& root, const LogSink& log) {
  auto runner = root / "cwb" / "runner";
  if (!fs::exists(runner)) {
    log("runner missing at " + runner.string());
    return report(client, fsm::ExecutionEvent::FailedOnRunning, 1, log);
  }
  int code = run_script(runner, root);
  log("runner exited with " + std::to_string(code));
  if (code != 0) return report(client, fsm::ExecutionEvent::FailedOnRunning, 1, log);
  return report(client, fsm::ExecutionEvent::FinishedRunning, 0, log);
}

int postprocess(Client& client, const fs::path& root, const LogSink& log) {
  auto script = root / "cwb" / "postprocess";
  if (fs::exists(script)) {
    int code = run_script(script, root);
    log("postprocess exited with " + std::to_string(code));
    if (code != 0) return report(client, fsm::ExecutionEvent::FailedOnPostprocessing, 1, log);
  }
  auto csv_path = root / "cwb" / "results.csv";
  if (fs::exists(csv_path)) {
    std::ifstream in(csv_path, std::ios::binary);
    std::stringstream buf;
    buf << in.rdbuf();
    try {
      client.submit_csv(buf.str(), client.config().execution_id + "-" + client.config().role + "-results");
    } catch (const Error& e) {
      log(std::string("results rejected: ") + e.what());
      if (e.code() == Errc::Transport) return 3;
      return report(client, fsm::ExecutionEvent::FailedOnPostprocessing, 1, log);
    }
  } else {
    log("no results file at " + csv_path.string());
  }
  return report(client, fsm::ExecutionEvent::FinishedPostprocessing, 0, log);
}

}  // namespace cwb::agent
