#include "cwb/gateway.hpp"

#include <algorithm>
#include <cctype>
#include <iostream>

#include <httplib.h>

#include "cwb/local_driver.hpp"
#include "cwb/simulated_driver.hpp"

namespace cwb::gateway {

namespace fs = std::filesystem;
using nlohmann::json;
using orchestration::Orchestrator;

ThreadPool::ThreadPool(std::size_t workers) {
  for (std::size_t i = 0; i < std::max<std::size_t>(1, workers); ++i)
    threads_.emplace_back([this] {
      while (true) {
        std::function<void()> job;
        {
          std::unique_lock lock(mu_);
          cv_.wait(lock, [this] { return stopping_ || !jobs_.empty(); });
          if (jobs_.empty()) return;
          job = std::move(jobs_.front());
          jobs_.pop_front();
        }
        job();
      }
    });
}

ThreadPool::~ThreadPool() {
  {
    std::lock_guard lock(mu_);
    stopping_ = true;
  }
  cv_.notify_all();
  for (auto& t : threads_) t.join();
}

void ThreadPool::submit(std::function<void()> job) {
  {
    std::lock_guard lock(mu_);
    jobs_.push_back(std::move(job));
  }
  cv_.notify_one();
}

int http_status(Errc code) {
  switch (code) {
    case Errc::Unauthorized: return 401;
    case Errc::BenchmarkNotFound:
    case Errc::ExecutionNotFound:
    case Errc::RecipeNotFound: return 404;
    case Errc::Conflict:
    case Errc::InvalidState:
    case Errc::AlreadyTerminal:
    case Errc::NotInDevMode:
    case Errc::ResourcesAlreadyReleased:
    case Errc::ExecutionNotAcceptingResults:
    case Errc::BenchmarkInactive:
    case Errc::DuplicateRecipe:
    case Errc::IllegalTransition: return 409;
    case Errc::PayloadTooLarge: return 413;
    case Errc::BadRequest: return 400;
    case Errc::NoCapacity:
    case Errc::StoreUnavailable:
    case Errc::ProviderUnavailable:
    case Errc::QuotaExceeded: return 503;
    case Errc::StepFailed:
    case Errc::AcquireFailed:
    case Errc::ReadinessTimeout:
    case Errc::ConnectionLost:
    case Errc::NonZeroExit:
    case Errc::ReleaseFailed:
    case Errc::ResourceReleased:
    case Errc::Transport:
    case Errc::PortInUse: return 502;
    default: return 422;
  }
}

json error_body(const Error& e) {
  json err = {{"code", errc_name(e.code())}, {"detail", e.detail()}};
  if (auto* v = dynamic_cast<const model::ValidationError*>(&e)) {
    err["violations"] = json::array();
    for (const auto& x : v->violations())
      err["violations"].push_back({{"code", errc_name(x.code)}, {"detail", x.detail}});
  }
  return {{"error", err}};
}

namespace {

json record_json(const store::ExecutionRecord& r) {
  return {{"id", r.id},
          {"benchmark_id", r.benchmark_id},
          {"cause", r.cause},
          {"created_at", format_instant(r.created_at)},
          {"updated_at", format_instant(r.updated_at)},
          {"state", fsm::to_string(r.state)},
          {"displayed_status", r.displayed_status},
          {"dev_mode", r.dev_mode}};
}

bool same_secret(const std::string& a, const std::string& b) {
  if (a.size() != b.size()) return false;
  unsigned char diff = 0;
  for (std::size_t i = 0; i < a.size(); ++i) diff |= static_cast<unsigned char>(a[i] ^ b[i]);
  return diff == 0;
}

std::string bearer(const httplib::Request& req) {
  auto h = req.get_header_value("Authorization");
  constexpr std::string_view prefix = "Bearer ";
  if (h.size() <= prefix.size() || h.compare(0, prefix.size(), prefix) != 0) return {};
  return h.substr(prefix.size());
}

json body_json(const httplib::Request& req, bool allow_empty = false) {
  if (req.body.empty()) {
    if (allow_empty) return json::object();
    throw Error(Errc::BadRequest, "request body required");
  }
  try {
    return json::parse(req.body);
  } catch (const json::parse_error& e) {
    throw Error(Errc::BadRequest, std::string("malformed JSON: ") + e.what());
  }
}

std::optional<std::string> param(const httplib::Request& req, const char* name) {
  if (!req.has_param(name)) return std::nullopt;
  return req.get_param_value(name);
}

Instant instant_param(const httplib::Request& req, const char* name) {
  auto v = req.get_param_value(name);
  try {
    return parse_instant(v);
  } catch (const std::exception&) {
    throw Error(Errc::BadRequest, std::string("parameter '") + name + "' is not an ISO-8601 instant");
  }
}

std::int64_t int_param(const httplib::Request& req, const char* name, std::int64_t fallback) {
  if (!req.has_param(name)) return fallback;
  const auto v = req.get_param_value(name);
  try {
    std::size_t used = 0;
    auto n = std::stoll(v, &used);
    if (used == v.size() && n >= 0) return n;
  } catch (const std::exception&) {
  }
  throw Error(Errc::BadRequest, std::string("parameter '") + name + "' must be a non-negative integer");
}

std::unique_ptr<Clock> make_clock(const ClockConfig& c) {
  if (!c.simulated) return std::make_unique<SystemClock>();
  return std::make_unique<ScaledClock>(c.start.value_or(SystemClock{}.now()), c.rate);
}

}  // namespace

Service::Service(Config config, const Clock* clock)
    : config_(std::move(config)),
      owned_clock_(clock ? nullptr : make_clock(config_.clock)),
      clock_(clock ? clock : owned_clock_.get()),
      store_(std::make_unique<store::Store>(config_.database)),
      benchmark_ids_("bm", *clock_, store_->benchmarks().size() + 1) {
  if (config_.operator_token.empty()) config_.operator_token = random_token();
  if (config_.simulated)
    drivers_.add(std::make_shared<providers::SimulatedDriver>(*config_.simulated, *clock_));
  if (config_.local) drivers_.add(std::make_shared<providers::LocalDriver>(*config_.local));

  if (!config_.recipes_dir.empty()) {
    if (!fs::is_directory(config_.recipes_dir))
      throw Error(Errc::BadConfig, "field 'recipes_dir': " + config_.recipes_dir.string() + " is not a directory");
    recipes_.load_directory(config_.recipes_dir);
  }
  for (const auto& doc : store_->recipes()) recipes_.add(provisioning::parse_recipe(doc), true);
}

Service::~Service() { stop(); }

std::string Service::base_url() const {
  std::string host = config_.host == "0.0.0.0" || config_.host.empty() ? "127.0.0.1" : config_.host;
  return "http://" + host + ":" + std::to_string(port_);
}

void Service::start() {
  if (running_) return;
  http_ = std::make_unique<httplib::Server>();
  // SO_REUSEPORT (the library default) would let a second server share the port.
  http_->set_socket_options([](socket_t sock) {
    int yes = 1;
    ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
  });
  routes();
  if (config_.port == 0) {
    port_ = http_->bind_to_any_port(config_.host);
    if (port_ <= 0) throw Error(Errc::PortInUse, "cannot bind " + config_.host);
  } else {
    if (!http_->bind_to_port(config_.host, config_.port))
      throw Error(Errc::PortInUse, config_.host + ":" + std::to_string(config_.port));
    port_ = config_.port;
  }

  pool_ = std::make_unique<ThreadPool>(config_.workers);
  orchestration::OrchestratorOptions opts;
  opts.max_preparing = config_.max_preparing;
  opts.max_postprocessing = config_.max_postprocessing;
  opts.server_url = config_.public_url.empty() ? base_url() : config_.public_url;
  opts.executor = [this](std::function<void()> job) { pool_->submit(std::move(job)); };
  opts.on_work = [this] { wake(); };
  orch_ = std::make_unique<Orchestrator>(opts, *store_, drivers_, recipes_, *clock_);
  orch_->recover();

  for (const auto& rec : store_->executions()) {
    if (rec.cause != "scheduled") continue;
    auto last = scheduler_.last_fired(rec.benchmark_id);
    if (!last || *last < rec.created_at) scheduler_.set_last_fired(rec.benchmark_id, rec.created_at);
  }

  running_ = true;
  stopped_ = false;
  loop_thread_ = std::thread([this] { supervise(); });
  http_thread_ = std::thread([this] { http_->listen_after_bind(); });
  while (!http_->is_running()) std::this_thread::sleep_for(std::chrono::milliseconds(5));
}

void Service::stop() {
  if (!running_ || stopped_) return;
  stopped_ = true;
  http_->stop();
  if (http_thread_.joinable()) http_thread_.join();
  running_ = false;
  wake();
  if (loop_thread_.joinable()) loop_thread_.join();
  orch_->drain();
  pool_.reset();
}

void Service::wake() {
  {
    std::lock_guard lock(loop_mu_);
    work_signal_ = true;
  }
  loop_cv_.notify_all();
}

void Service::tick() {
  auto now = clock_->now();
  std::vector<sched::ScheduledBenchmark> scheduled;
  for (const auto& doc : store_->benchmarks()) {
    if (doc.value("schedule", json()).is_null() || !doc.value("active", true)) continue;
    try {
      auto def = model::from_json(doc, drivers_.ids());
      scheduled.push_back({def.id, def.schedule, def.active});
    } catch (const Error&) {
    }
  }
  for (const auto& id : scheduler_.tick(now, scheduled)) {
    try {
      orch_->trigger(id, orchestration::Cause::Scheduled);
    } catch (const Error& e) {
      std::cerr << "cwb: scheduled trigger of " << id << " failed: " << e.what() << std::endl;
    }
  }
  try {
    orch_->advance();
  } catch (const std::exception& e) {
    std::cerr << "cwb: supervision pass failed: " << e.what() << std::endl;
  }
}

void Service::supervise() {
  using namespace std::chrono;
  while (running_) {
    tick();
    // One simulated second at most, so cron minutes are not overshot.
    double rate = 1;
    if (auto* scaled = dynamic_cast<const ScaledClock*>(clock_)) rate = scaled->rate();
    auto wait = std::max(milliseconds(50), duration_cast<milliseconds>(duration<double, std::milli>(1000 / rate)));
    if (auto next = orch_->next_wakeup()) {
      auto until = duration_cast<milliseconds>(duration<double, std::milli>(*next - clock_->now()) / rate);
      wait = std::clamp(until, milliseconds(50), wait);
    }
    std::unique_lock lock(loop_mu_);
    loop_cv_.wait_for(lock, wait, [this] { return work_signal_ || !running_; });
    work_signal_ = false;
  }
}

model::BenchmarkDefinition Service::load_benchmark(const std::string& id) const {
  auto doc = store_->benchmark(id);
  if (!doc) throw Error(Errc::BenchmarkNotFound, id);
  return model::from_json(*doc, drivers_.ids());
}

json Service::create_benchmark(const json& doc) {
  auto def = model::validate_definition(doc, drivers_.ids(), config_.defaults);
  for (const auto& b : def.provisioning)
    if (!recipes_.contains(b.recipe)) throw Error(Errc::RecipeNotFound, b.recipe.str());
  def.id = benchmark_ids_.next();
  store_->put_benchmark(def);
  return model::to_json(def);
}

json Service::clone_benchmark(const std::string& id, const json& overrides) {
  auto base = load_benchmark(id);
  auto copy = model::clone_with_overrides(base, overrides, benchmark_ids_.next(), drivers_.ids());
  store_->put_benchmark(copy);
  return model::to_json(copy);
}

json Service::variability(const std::string& benchmark_id, const std::string& metric) const {
  auto def = load_benchmark(benchmark_id);
  const auto* m = def.find_metric(metric);
  if (!m) throw Error(Errc::UnknownMetric, metric + " is not defined on " + benchmark_id);
  if (m->scale == model::ScaleType::Nominal || m->scale == model::ScaleType::Ordinal)
    throw Error(Errc::ScaleUnsupported, metric + " is " + std::string(model::to_string(m->scale)));
  std::vector<std::vector<double>> series;
  std::vector<std::string> ids;
  store::ExecutionFilter finished;
  finished.state = "FINISHED";
  finished.benchmark_id = benchmark_id;
  for (const auto& rec : store_->executions(finished)) {
    if (rec.state != fsm::ExecutionState::Finished) continue;
    std::vector<double> values;
    for (const auto& o : store_->observations(rec.id, metric))
      if (auto* d = std::get_if<double>(&o.value)) values.push_back(*d);
    if (values.empty()) continue;
    series.push_back(std::move(values));
    ids.push_back(rec.id);
  }
  auto row = results::variability(series, def.name + " / " + metric);
  auto out = results::to_json(row);
  out["benchmark_id"] = benchmark_id;
  out["metric"] = metric;
  out["execution_ids"] = ids;
  return out;
}

void Service::routes() {
  using Req = httplib::Request;
  using Res = httplib::Response;
  using Fn = std::function<json(const Req&, Res&)>;
  enum class Auth { None, Operator, Agent };

  auto handle = [this](Auth auth, Fn fn) {
    return [this, auth, fn = std::move(fn)](const Req& req, Res& res) {
      try {
        if (auth == Auth::Operator && !same_secret(bearer(req), config_.operator_token))
          throw Error(Errc::Unauthorized, "operator token required");
        if (auth == Auth::Agent) {
          const auto id = req.matches[1].str();
          if (!store_->execution(id)) throw Error(Errc::ExecutionNotFound, id);
          if (!orch_->token_matches(id, bearer(req))) throw Error(Errc::Unauthorized, "execution token mismatch");
        }
        res.status = 200;
        auto body = fn(req, res);
        if (!body.is_null()) res.set_content(body.dump(), "application/json");
      } catch (const Error& e) {
        res.status = http_status(e.code());
        res.set_content(error_body(e).dump(), "application/json");
      } catch (const json::exception& e) {
        res.status = 400;
        res.set_content(error_body(Error(Errc::BadRequest, e.what())).dump(), "application/json");
      }
    };
  };
  auto& s = *http_;
  const std::string id = "([A-Za-z0-9._-]+)";

  s.Get("/health", handle(Auth::None, [this](const Req&, Res&) {
          return json{{"status", "ok"}, {"active_executions", orch_->active_count()}};
        }));

  // benchmarks
  s.Post("/api/benchmarks", handle(Auth::Operator, [this](const Req& req, Res& res) {
           auto out = create_benchmark(body_json(req));
           res.status = 201;
           return out;
         }));
  s.Get("/api/benchmarks", handle(Auth::Operator, [this](const Req&, Res&) {
          return json(store_->benchmarks());
        }));
  s.Get("/api/benchmarks/" + id, handle(Auth::Operator, [this](const Req& req, Res&) {
          auto doc = store_->benchmark(req.matches[1]);
          if (!doc) throw Error(Errc::BenchmarkNotFound, req.matches[1]);
          return *doc;
        }));
  s.Post("/api/benchmarks/" + id + "/clone", handle(Auth::Operator, [this](const Req& req, Res& res) {
           auto body = body_json(req, true);
           auto overrides = body.contains("overrides") ? body.at("overrides") : json::object();
           auto out = clone_benchmark(req.matches[1], overrides);
           res.status = 201;
           return out;
         }));
  s.Post("/api/benchmarks/" + id + "/executions", handle(Auth::Operator, [this](const Req& req, Res& res) {
           auto exec = orch_->trigger(req.matches[1], orchestration::Cause::Manual);
           res.status = 201;
           return orch_->view(exec);
         }));
  s.Get("/api/benchmarks/" + id + "/metrics/([A-Za-z0-9._-]+)/variability",
        handle(Auth::Operator, [this](const Req& req, Res&) {
          return variability(req.matches[1], req.matches[2]);
        }));

  // executions
  s.Get("/api/executions", handle(Auth::Operator, [this](const Req& req, Res&) {
          store::ExecutionFilter f;
          f.state = param(req, "state");
          f.benchmark_id = param(req, "benchmark");
          if (req.has_param("from")) f.created_from = instant_param(req, "from");
          if (req.has_param("to")) f.created_to = instant_param(req, "to");
          json out = json::array();
          for (const auto& r : store_->executions(f)) out.push_back(record_json(r));
          return out;
        }));
  s.Get("/api/executions/" + id, handle(Auth::Operator, [this](const Req& req, Res&) {
          return orch_->view(req.matches[1]);
        }));
  s.Get("/api/executions/" + id + "/log", handle(Auth::Operator, [this](const Req& req, Res&) {
          const std::string exec = req.matches[1];
          if (!store_->execution(exec)) throw Error(Errc::ExecutionNotFound, exec);
          auto after = int_param(req, "after", 0);
          auto limit = int_param(req, "limit", 1000);
          json lines = json::array();
          for (const auto& l : store_->log_after(exec, after, static_cast<std::size_t>(limit))) {
            lines.push_back({{"cursor", l.cursor}, {"at", format_instant(l.at)}, {"text", l.text}});
            after = l.cursor;
          }
          return json{{"lines", lines}, {"cursor", after}};
        }));
  s.Get("/api/executions/" + id + "/observations", handle(Auth::Operator, [this](const Req& req, Res& res) {
          const std::string exec = req.matches[1];
          if (!store_->execution(exec)) throw Error(Errc::ExecutionNotFound, exec);
          auto obs = store_->observations(exec, param(req, "metric"));
          if (req.get_param_value("format") == "csv") {
            res.set_content(results::to_csv(obs), "text/csv");
            return json();
          }
          json out = json::array();
          for (const auto& o : obs) out.push_back(results::to_json(o));
          return out;
        }));
  s.Post("/api/executions/" + id + "/dev_mode", handle(Auth::Operator, [this](const Req& req, Res&) {
           orch_->enter_dev_mode(req.matches[1]);
           return orch_->view(req.matches[1]);
         }));
  s.Delete("/api/executions/" + id + "/dev_mode", handle(Auth::Operator, [this](const Req& req, Res&) {
             orch_->exit_dev_mode(req.matches[1]);
             return orch_->view(req.matches[1]);
           }));
  s.Post("/api/executions/" + id + "/reprovision", handle(Auth::Operator, [this](const Req& req, Res&) {
           const std::string exec = req.matches[1];
           json report;
           try {
             report = provisioning::to_json(orch_->reprovision(exec));
           } catch (const provisioning::ProvisionError& e) {
             report = provisioning::to_json(e.report());
             report["error"] = error_body(e).at("error");
           }
           return json{{"report", report}, {"execution", orch_->view(exec)}};
         }));
  s.Post("/api/executions/" + id + "/release", handle(Auth::Operator, [this](const Req& req, Res&) {
           orch_->release_now(req.matches[1]);
           return orch_->view(req.matches[1]);
         }));

  // recipes
  s.Get("/api/recipes", handle(Auth::Operator, [this](const Req&, Res&) {
          json out = json::array();
          for (const auto& ref : recipes_.list()) out.push_back(provisioning::to_json(*recipes_.get(ref)));
          return out;
        }));
  s.Get("/api/recipes/([A-Za-z0-9._-]+@[A-Za-z0-9._-]+)", handle(Auth::Operator, [this](const Req& req, Res&) {
          auto ref = model::RecipeRef::parse(req.matches[1].str());
          if (!ref) throw Error(Errc::BadRecipeRef, req.matches[1]);
          return provisioning::to_json(*recipes_.get(*ref));
        }));
  s.Post("/api/recipes", handle(Auth::Operator, [this](const Req& req, Res& res) {
           auto recipe = provisioning::parse_recipe(body_json(req));
           auto doc = provisioning::to_json(recipe);
           recipes_.add(recipe);
           store_->put_recipe(doc);
           res.status = 201;
           return doc;
         }));

  // agent
  s.Put("/agent/executions/" + id + "/state", handle(Auth::Agent, [this](const Req& req, Res&) {
          auto body = body_json(req);
          auto name = body.at("event").get<std::string>();
          std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) { return std::toupper(c); });
          auto ev = fsm::parse_event(name);
          if (!ev) throw Error(Errc::BadRequest, "unknown event " + name);
          auto ack = orch_->notify(req.matches[1], *ev);
          return json{{"displayed_status", ack.displayed_status},
                      {"state", fsm::to_string(ack.state)},
                      {"duplicate", ack.duplicate}};
        }));
  s.Post("/agent/executions/" + id + "/metrics", handle(Auth::Agent, [this](const Req& req, Res&) {
           auto body = body_json(req);
           std::optional<std::int64_t> offset;
           if (body.contains("offset_ms") && !body["offset_ms"].is_null()) offset = body["offset_ms"].get<std::int64_t>();
           std::optional<std::string> submission;
           if (body.contains("submission_id")) submission = body["submission_id"].get<std::string>();
           auto r = orch_->record(req.matches[1], body.at("metric").get<std::string>(), body.at("value"), offset,
                                  submission);
           return json{{"count", r.count}, {"duplicate", r.duplicate}};
         }));
  s.Post("/agent/executions/" + id + "/metrics/csv", handle(Auth::Agent, [this](const Req& req, Res&) {
           std::optional<std::string> batch;
           if (req.has_header("X-Batch-Id")) batch = req.get_header_value("X-Batch-Id");
           auto r = orch_->ingest_csv(req.matches[1], req.body, batch);
           return json{{"count", r.count}, {"duplicate", r.duplicate}};
         }));
}

}  // namespace cwb::gateway
