#include "cwb/orchestrator.hpp"

#include <algorithm>
#include <tuple>

#include "cwb/error.hpp"

namespace cwb::orchestration {

using fsm::ExecutionEvent;
using fsm::ExecutionState;

std::string_view to_string(Cause c) { return c == Cause::Manual ? "manual" : "scheduled"; }

namespace {

bool is_agent_event(ExecutionEvent e) {
  return e == ExecutionEvent::FinishedRunning || e == ExecutionEvent::FailedOnRunning ||
         e == ExecutionEvent::FinishedPostprocessing || e == ExecutionEvent::FailedOnPostprocessing;
}

bool holds_resources_for_dev(ExecutionState s) {
  return s == ExecutionState::FailedOnPreparing || s == ExecutionState::FailedOnRunning ||
         s == ExecutionState::FailedOnPostprocessing;
}

// Deadline event for states the run deadline applies to.
std::optional<ExecutionEvent> timeout_event(ExecutionState s) {
  switch (s) {
    case ExecutionState::Preparing: return ExecutionEvent::FailedOnPreparing;
    case ExecutionState::WaitingForStartRunning: return ExecutionEvent::FailedOnRunning;
    case ExecutionState::Running: return ExecutionEvent::RunTimeoutElapsed;
    case ExecutionState::WaitingForStartPostprocessing:
    case ExecutionState::Postprocessing: return ExecutionEvent::FailedOnPostprocessing;
    default: return std::nullopt;
  }
}

std::string list_handles(const std::vector<ResourceHandle>& hs) {
  std::string out;
  for (const auto& h : hs) out += (out.empty() ? "" : ", ") + h.id + " (" + std::string(to_string(h.kind)) + ")";
  return out;
}

}  // namespace

Orchestrator::Orchestrator(OrchestratorOptions options, store::Store& store,
                           providers::DriverRegistry& drivers, provisioning::RecipeRegistry& recipes,
                           const Clock& clock)
    : options_(std::move(options)),
      store_(store),
      drivers_(drivers),
      recipes_(recipes),
      clock_(clock),
      ids_("exec", clock, store.executions().size() + 1),
      prep_slots_(std::max<std::size_t>(1, options_.max_preparing)),
      post_slots_(std::max<std::size_t>(1, options_.max_postprocessing)) {}

Orchestrator::~Orchestrator() { drain(); }

// ---------------------------------------------------------------------------
// bookkeeping

Orchestrator::Runtime* Orchestrator::find_active(const std::string& id) {
  auto it = active_.find(id);
  return it == active_.end() ? nullptr : it->second.get();
}

const Orchestrator::Runtime* Orchestrator::find_active(const std::string& id) const {
  auto it = active_.find(id);
  return it == active_.end() ? nullptr : it->second.get();
}

Orchestrator::Runtime& Orchestrator::active(const std::string& id, Errc if_terminal) {
  if (auto* rt = find_active(id)) return *rt;
  auto rec = store_.execution(id);
  if (!rec) throw Error(Errc::ExecutionNotFound, id);
  throw Error(if_terminal, id + " is " + rec->displayed_status);
}

void Orchestrator::log(const Runtime& rt, const std::string& text) {
  store_.append_log(rt.id, clock_.now(), text);
}

void Orchestrator::emit(Runtime& rt, ExecutionEvent ev) {
  auto next = fsm::apply_event(rt.state, ev, rt.dev_mode);
  auto now = clock_.now();
  rt.dev_mode = fsm::dev_mode_after(ev, rt.dev_mode);
  bool changed = next != rt.state;
  rt.state = next;
  if (!rt.first_failure)
    if (auto f = fsm::failure_state_of(ev)) rt.first_failure = *f;
  rt.seen.push_back(ev);
  auto shown = fsm::display_name(rt.first_failure.value_or(rt.state));
  store_.append_event(rt.id, {now, ev}, rt.state, rt.dev_mode, shown);
  log(rt, std::string("event ") + std::string(fsm::to_string(ev)) + " -> " +
              std::string(fsm::to_string(rt.state)));
  if (changed) on_entered(rt, ev);
}

void Orchestrator::on_entered(Runtime& rt, ExecutionEvent) {
  if (fsm::is_terminal(rt.state)) {
    finish(rt);
    return;
  }
  if (holds_resources_for_dev(rt.state)) {
    free_slots(rt);
    rt.phase = Phase::Held;
    rt.grace_deadline = clock_.now() + Minutes{rt.def.release_grace};
    return;
  }
  if (rt.state == ExecutionState::ReleasingResources) {
    free_slots(rt);
    begin_release(rt);
  }
}

void Orchestrator::fail(Runtime& rt, ExecutionEvent ev, const std::string& why) {
  log(rt, why);
  if (fsm::try_apply(rt.state, ev, rt.dev_mode)) emit(rt, ev);
}

void Orchestrator::free_slots(Runtime& rt) {
  if (rt.holds_prep) prep_slots_.give_back();
  if (rt.holds_post) post_slots_.give_back();
  rt.holds_prep = rt.holds_post = false;
}

void Orchestrator::begin_release(Runtime& rt) {
  rt.phase = Phase::Releasing;
  rt.grace_deadline.reset();
  if (rt.busy > 0) {
    rt.release_pending = true;
    return;
  }
  ++rt.busy;
  schedule([this, id = rt.id] { release_task(id); });
}

void Orchestrator::task_done(Runtime& rt) {
  --rt.busy;
  if (rt.busy == 0 && rt.release_pending) {
    rt.release_pending = false;
    ++rt.busy;
    schedule([this, id = rt.id] { release_task(id); });
  }
}

void Orchestrator::finish(Runtime& rt) {
  free_slots(rt);
  for (const auto& provider : drivers_.ids()) drivers_.get(provider).close_owner(rt.id);
  finished_.push_back(rt.id);
}

void Orchestrator::reap() {
  for (const auto& id : finished_) {
    auto it = active_.find(id);
    if (it != active_.end() && it->second->busy == 0) active_.erase(it);
  }
  std::erase_if(finished_, [&](const std::string& id) { return !active_.contains(id); });
  if (active_.empty() && in_flight_ == 0) idle_cv_.notify_all();
}

void Orchestrator::schedule(Task t) {
  pending_.push_back(std::move(t));
  ++in_flight_;
  if (options_.on_work) options_.on_work();
}

void Orchestrator::run_tasks() {
  std::vector<Task> batch;
  {
    Lock lock(mu_);
    batch.swap(pending_);
  }
  for (auto& t : batch) {
    auto run = [this, t = std::move(t)] {
      try {
        t();
      } catch (const std::exception&) {
        // Tasks record their own failures; nothing may escape a worker.
      }
      {
        Lock lock(mu_);
        --in_flight_;
        reap();
      }
      idle_cv_.notify_all();
      if (options_.executor) dispatch();
    };
    if (options_.executor) {
      options_.executor(std::move(run));
    } else {
      run();
    }
  }
}

void Orchestrator::dispatch() {
  if (options_.executor) {
    run_tasks();
    return;
  }
  // Inline mode: nested dispatches leave their work to the outermost loop.
  static thread_local bool draining = false;
  if (draining) return;
  draining = true;
  while (true) {
    {
      Lock lock(mu_);
      if (pending_.empty()) break;
    }
    run_tasks();
  }
  draining = false;
}

// ---------------------------------------------------------------------------
// triggering and supervision

std::string Orchestrator::trigger(const std::string& benchmark_id, Cause cause) {
  auto doc = store_.benchmark(benchmark_id);
  if (!doc) throw Error(Errc::BenchmarkNotFound, benchmark_id);
  auto def = model::from_json(*doc, drivers_.ids());
  if (!def.active) throw Error(Errc::BenchmarkInactive, benchmark_id);

  std::string id;
  {
    Lock lock(mu_);
    auto rt = std::make_unique<Runtime>();
    rt->id = id = ids_.next();
    rt->def = std::move(def);
    rt->token = random_token();
    rt->created_at = clock_.now();
    rt->deadline = rt->created_at + Minutes{rt->def.timeout};
    rt->seen.push_back(ExecutionEvent::Created);

    store::ExecutionRecord rec;
    rec.id = id;
    rec.benchmark_id = benchmark_id;
    rec.cause = std::string(to_string(cause));
    rec.token = rt->token;
    rec.created_at = rec.updated_at = rt->created_at;
    rec.displayed_status = fsm::display_name(rt->state);
    store_.create_execution(rec, rt->created_at);
    log(*rt, "event CREATED (" + rec.cause + ") -> WAITING_FOR_START_PREPARING");

    active_.emplace(id, std::move(rt));
    prep_queue_.push_back(id);
    start_queued();
  }
  dispatch();
  return id;
}

void Orchestrator::advance() {
  auto now = clock_.now();
  std::vector<providers::AgentMessage> messages;
  for (const auto& provider : drivers_.ids()) {
    auto got = drivers_.get(provider).poll_messages(now);
    messages.insert(messages.end(), got.begin(), got.end());
  }
  std::stable_sort(messages.begin(), messages.end(),
                   [](const auto& a, const auto& b) { return a.at < b.at; });
  {
    Lock lock(mu_);
    for (const auto& m : messages) handle_message(m);
    enforce_timeouts(now);
    poll_readiness();
    start_queued();
    reap();
  }
  dispatch();
  Lock lock(mu_);
  reap();
}

void Orchestrator::handle_message(const providers::AgentMessage& m) {
  auto* rt = find_active(m.execution_id);
  if (!rt) return;  // the execution ended before its agent spoke
  try {
    if (m.kind == providers::AgentMessage::Kind::MetricsCsv) {
      auto r = ingest_locked(*rt, m.csv, m.batch_id.empty() ? std::nullopt : std::optional(m.batch_id));
      log(*rt, "agent submitted " + std::to_string(r.count) + " observations" +
                   (r.duplicate ? " (duplicate batch ignored)" : ""));
    } else {
      notify_locked(*rt, m.event);
    }
  } catch (const Error& e) {
    log(*rt, std::string("agent message rejected: ") + e.what());
  }
}

void Orchestrator::enforce_timeouts(Instant now) {
  enum Kind { Run, Grace };
  std::vector<std::tuple<Instant, std::string, Kind>> due;
  for (const auto& [id, rt] : active_) {
    if (timeout_event(rt->state) && now >= rt->deadline) due.emplace_back(rt->deadline, id, Run);
    if (holds_resources_for_dev(rt->state) && !rt->dev_mode && rt->grace_deadline &&
        now >= *rt->grace_deadline)
      due.emplace_back(*rt->grace_deadline, id, Grace);
  }
  std::sort(due.begin(), due.end());
  for (const auto& [at, id, kind] : due) {
    auto* rt = find_active(id);
    if (!rt) continue;
    if (kind == Run) {
      if (auto ev = timeout_event(rt->state))
        fail(*rt, *ev, "execution timeout of " + std::to_string(rt->def.timeout.count()) + " min elapsed");
    } else if (holds_resources_for_dev(rt->state) && !rt->dev_mode) {
      emit(*rt, ExecutionEvent::ReleaseGraceElapsed);
    }
  }
}

void Orchestrator::poll_readiness() {
  for (auto& [id, rtp] : active_) {
    auto& rt = *rtp;
    if (rt.phase != Phase::AwaitingReady || rt.busy > 0) continue;
    bool all_ready = true;
    try {
      for (auto& h : rt.handles) {
        if (h.status != ResourceStatus::Requested) continue;
        auto ready = drivers_.get(h.provider).poll_ready(h.id);
        if (!ready) {
          all_ready = false;
          continue;
        }
        h = *ready;
        store_.save_resource(rt.id, h);
      }
    } catch (const Error& e) {
      fail(rt, ExecutionEvent::FailedOnPreparing, std::string("readiness: ") + e.what());
      continue;
    }
    if (!all_ready) continue;
    log(rt, "resources ready: " + list_handles(rt.handles));
    rt.phase = Phase::Provisioning;
    ++rt.busy;
    schedule([this, id = rt.id] { provision_task(id); });
  }
}

void Orchestrator::start_queued() {
  while (!prep_queue_.empty()) {
    auto* rt = find_active(prep_queue_.front());
    if (!rt || rt->phase != Phase::Queued) {
      prep_queue_.pop_front();
      continue;
    }
    if (!prep_slots_.try_take()) break;
    prep_queue_.pop_front();
    rt->holds_prep = true;
    start_preparing(*rt);
  }
  while (!post_queue_.empty()) {
    auto* rt = find_active(post_queue_.front());
    if (!rt || rt->phase != Phase::PostQueued) {
      post_queue_.pop_front();
      continue;
    }
    if (!post_slots_.try_take()) break;
    post_queue_.pop_front();
    rt->holds_post = true;
    start_postprocessing(*rt);
  }
}

std::optional<Instant> Orchestrator::next_wakeup() const {
  std::optional<Instant> next;
  auto consider = [&](Instant t) {
    if (!next || t < *next) next = t;
  };
  for (const auto& provider : drivers_.ids())
    if (auto t = drivers_.get(provider).next_message_at()) consider(*t);
  Lock lock(mu_);
  for (const auto& [id, rt] : active_) {
    if (timeout_event(rt->state)) consider(rt->deadline);
    if (holds_resources_for_dev(rt->state) && !rt->dev_mode && rt->grace_deadline)
      consider(*rt->grace_deadline);
    if (rt->phase == Phase::AwaitingReady)
      for (const auto& h : rt->handles)
        if (h.status == ResourceStatus::Requested)
          if (auto t = drivers_.get(h.provider).ready_at(h.id)) consider(*t);
  }
  return next;
}

// ---------------------------------------------------------------------------
// pipeline phases

void Orchestrator::start_preparing(Runtime& rt) {
  emit(rt, ExecutionEvent::StartedPreparing);
  max_prep_seen_ = std::max(max_prep_seen_, prep_slots_.used());
  if (clock_.now() >= rt.deadline) {
    fail(rt, ExecutionEvent::FailedOnPreparing, "execution timeout elapsed before preparation started");
    return;
  }
  rt.phase = Phase::Acquiring;
  ++rt.busy;
  schedule([this, id = rt.id] { acquire_task(id); });
}

void Orchestrator::acquire_task(std::string id) {
  model::BenchmarkDefinition def;
  {
    Lock lock(mu_);
    auto* rt = find_active(id);
    if (!rt) return;
    def = rt->def;
  }
  std::vector<ResourceHandle> got;
  std::optional<std::string> error;
  for (const auto& vm : def.vms) {
    try {
      auto hs = drivers_.get(vm.provider).acquire(vm, id);
      got.insert(got.end(), hs.begin(), hs.end());
    } catch (const Error& e) {
      error = "acquire " + vm.role + ": " + e.what();
      break;
    }
  }
  Lock lock(mu_);
  auto* rt = find_active(id);
  if (!rt) return;
  for (const auto& h : got) {
    rt->handles.push_back(h);
    store_.save_resource(id, h);
  }
  if (!got.empty()) log(*rt, "acquired " + list_handles(got));
  if (error) {
    fail(*rt, ExecutionEvent::FailedOnPreparing, *error);
  } else if (rt->state == ExecutionState::Preparing) {
    rt->phase = Phase::AwaitingReady;
  }
  task_done(*rt);
  poll_readiness();
}

std::vector<ResourceHandle> Orchestrator::vm_handles(const Runtime& rt) const {
  std::vector<ResourceHandle> out;
  for (const auto& vm : rt.def.vms)
    for (const auto& h : rt.handles)
      if (h.kind == ResourceKind::Vm && h.role == vm.role && h.provider == vm.provider) {
        out.push_back(h);
        break;
      }
  return out;
}

provisioning::ProvisionReport Orchestrator::provision_all(const std::string& id,
                                                          const std::vector<ResourceHandle>& vms,
                                                          const model::BenchmarkDefinition& def,
                                                          const std::string& token) {
  provisioning::ProvisionReport total;
  for (const auto& vm : vms) {
    auto& driver = drivers_.get(vm.provider);
    provisioning::AgentConfig agent{options_.server_url, id, token, vm.role};
    driver.sync(vm.id, {{"/cwb/config", provisioning::to_json(agent).dump(2) + "\n", false}});
    try {
      auto report = provisioning::apply(provisioning::resolve(def, vm.role, recipes_), vm.id, driver, agent);
      total.steps.insert(total.steps.end(), report.steps.begin(), report.steps.end());
    } catch (const provisioning::ProvisionError& e) {
      total.steps.insert(total.steps.end(), e.report().steps.begin(), e.report().steps.end());
      throw provisioning::ProvisionError(vm.role + ": " + e.detail(), total);
    }
  }
  return total;
}

void Orchestrator::provision_task(std::string id) {
  std::vector<ResourceHandle> vms;
  model::BenchmarkDefinition def;
  std::string token;
  {
    Lock lock(mu_);
    auto* rt = find_active(id);
    if (!rt) return;
    vms = vm_handles(*rt);
    def = rt->def;
    token = rt->token;
  }
  provisioning::ProvisionReport report;
  std::optional<std::string> error;
  try {
    report = provision_all(id, vms, def, token);
  } catch (const provisioning::ProvisionError& e) {
    report = e.report();
    error = e.what();
  } catch (const Error& e) {
    error = e.what();
  }

  Lock lock(mu_);
  auto* rt = find_active(id);
  if (!rt) return;
  for (const auto& s : report.steps)
    log(*rt, "provision " + s.recipe + " step " + std::to_string(s.index) + " " +
                 std::string(provisioning::to_string(s.kind)) + ": " +
                 std::string(provisioning::to_string(s.outcome)) + (s.detail.empty() ? "" : " (" + s.detail + ")"));
  if (rt->state == ExecutionState::Preparing) {
    if (error) {
      fail(*rt, ExecutionEvent::FailedOnPreparing, "provisioning failed: " + *error);
    } else {
      emit(*rt, ExecutionEvent::FinishedPreparing);
      if (rt->holds_prep) prep_slots_.give_back();
      rt->holds_prep = false;
      start_running(*rt);
    }
  }
  task_done(*rt);
  start_queued();
}

void Orchestrator::start_running(Runtime& rt) {
  emit(rt, ExecutionEvent::StartedRunning);
  rt.phase = Phase::Running;
  for (const auto& vm : vm_handles(rt)) {
    ++rt.busy;
    schedule([this, id = rt.id, h = vm.id] {
      exec_task(id, h, "cwb-agent run", ExecutionEvent::FailedOnRunning);
    });
  }
}

void Orchestrator::start_postprocessing(Runtime& rt) {
  emit(rt, ExecutionEvent::StartedPostprocessing);
  rt.phase = Phase::Postprocessing;
  auto vms = vm_handles(rt);
  if (vms.empty()) {
    fail(rt, ExecutionEvent::FailedOnPostprocessing, "no VM available for postprocessing");
    return;
  }
  ++rt.busy;
  schedule([this, id = rt.id, h = vms.front().id] {
    exec_task(id, h, "cwb-agent postprocess", ExecutionEvent::FailedOnPostprocessing);
  });
}

void Orchestrator::exec_task(std::string id, std::string handle_id, std::string command,
                             ExecutionEvent on_failure) {
  std::string provider;
  {
    Lock lock(mu_);
    auto* rt = find_active(id);
    if (!rt) return;
    for (const auto& h : rt->handles)
      if (h.id == handle_id) provider = h.provider;
  }
  std::optional<std::string> error;
  try {
    auto r = drivers_.get(provider).exec(handle_id, command, providers::ExecMode::FireAndForget);
    if (r.exit_code != 0) error = command + " exited " + std::to_string(r.exit_code);
  } catch (const Error& e) {
    error = command + ": " + e.what();
  }
  Lock lock(mu_);
  auto* rt = find_active(id);
  if (!rt) return;
  if (error) {
    fail(*rt, on_failure, *error);
  } else {
    log(*rt, "started `" + command + "` on " + handle_id);
  }
  task_done(*rt);
}

void Orchestrator::release_task(std::string id) {
  std::vector<ResourceHandle> handles;
  {
    Lock lock(mu_);
    auto* rt = find_active(id);
    if (!rt) return;
    handles = rt->handles;
  }
  std::vector<std::pair<std::size_t, std::string>> failures;
  // Attached storage goes before the machine it hangs off.
  for (std::size_t i = handles.size(); i-- > 0;) {
    auto& h = handles[i];
    if (h.status == ResourceStatus::Released) continue;
    try {
      drivers_.get(h.provider).release(h.id);
      h.status = ResourceStatus::Released;
    } catch (const Error& e) {
      failures.emplace_back(i, h.id + ": " + e.what());
    }
  }
  Lock lock(mu_);
  auto* rt = find_active(id);
  if (!rt) return;
  rt->handles = handles;
  for (const auto& h : handles) store_.save_resource(id, h);
  --rt->busy;
  if (failures.empty()) {
    log(*rt, handles.empty() ? "no resources to release" : "released " + list_handles(handles));
    emit(*rt, ExecutionEvent::FinishedReleasingResources);
  } else {
    for (const auto& [i, msg] : failures) log(*rt, "release failed: " + msg);
    emit(*rt, ExecutionEvent::FailedOnReleasing);
  }
}

// ---------------------------------------------------------------------------
// agent-facing

NotifyAck Orchestrator::notify_locked(Runtime& rt, ExecutionEvent ev) {
  if (!is_agent_event(ev))
    throw Error(Errc::BadRequest, std::string(fsm::to_string(ev)) + " cannot be reported by an agent");
  NotifyAck ack;
  if (fsm::try_apply(rt.state, ev, rt.dev_mode)) {
    emit(rt, ev);
    if (ev == ExecutionEvent::FinishedRunning) {
      if (rt.def.vms.size() == 1) {
        start_postprocessing(rt);
      } else {
        rt.phase = Phase::PostQueued;
        post_queue_.push_back(rt.id);
        start_queued();
      }
    }
  } else if (std::find(rt.seen.begin(), rt.seen.end(), ev) != rt.seen.end()) {
    log(rt, std::string("duplicate ") + std::string(fsm::to_string(ev)) + " ignored");
    ack.duplicate = true;
  } else {
    throw Error(Errc::Conflict, std::string(fsm::to_string(ev)) + " is not allowed in " +
                                    std::string(fsm::to_string(rt.state)));
  }
  ack.state = rt.state;
  ack.displayed_status = fsm::display_name(rt.first_failure.value_or(rt.state));
  return ack;
}

NotifyAck Orchestrator::notify(const std::string& execution_id, ExecutionEvent event) {
  NotifyAck ack;
  {
    Lock lock(mu_);
    auto* rt = find_active(execution_id);
    if (!rt) {
      auto rec = store_.execution(execution_id);
      if (!rec) throw Error(Errc::ExecutionNotFound, execution_id);
      throw Error(Errc::Conflict, execution_id + " is terminal (" + rec->displayed_status + ")");
    }
    ack = notify_locked(*rt, event);
    reap();
  }
  dispatch();
  return ack;
}

Orchestrator::Runtime& Orchestrator::accepting(const std::string& execution_id) {
  auto* rt = find_active(execution_id);
  if (!rt) {
    if (!store_.execution(execution_id)) throw Error(Errc::ExecutionNotFound, execution_id);
    throw Error(Errc::ExecutionNotAcceptingResults, execution_id + " has terminated");
  }
  if (rt->state != ExecutionState::Running && rt->state != ExecutionState::Postprocessing && !rt->dev_mode)
    throw Error(Errc::ExecutionNotAcceptingResults,
                execution_id + " is " + std::string(fsm::to_string(rt->state)));
  return *rt;
}

store::BatchResult Orchestrator::record(const std::string& execution_id, const std::string& metric,
                                        const nlohmann::json& value, std::optional<std::int64_t> offset_ms,
                                        const std::optional<std::string>& submission_id) {
  Lock lock(mu_);
  auto& rt = accepting(execution_id);
  auto o = results::make_observation(rt.def, execution_id, metric, value, offset_ms, clock_.now());
  return store_.add_observations(execution_id, std::span(&o, 1), submission_id);
}

store::BatchResult Orchestrator::ingest_locked(Runtime& rt, std::string_view csv,
                                               const std::optional<std::string>& batch_id) {
  if (rt.state != ExecutionState::Running && rt.state != ExecutionState::Postprocessing && !rt.dev_mode)
    throw Error(Errc::ExecutionNotAcceptingResults, rt.id + " is " + std::string(fsm::to_string(rt.state)));
  auto batch = results::parse_batch(rt.def, rt.id, csv, clock_.now());
  return store_.add_observations(rt.id, batch, batch_id);
}

store::BatchResult Orchestrator::ingest_csv(const std::string& execution_id, std::string_view csv,
                                            const std::optional<std::string>& batch_id) {
  Lock lock(mu_);
  auto& rt = accepting(execution_id);
  auto r = ingest_locked(rt, csv, batch_id);
  log(rt, "agent submitted " + std::to_string(r.count) + " observations" +
              (r.duplicate ? " (duplicate batch ignored)" : ""));
  return r;
}

bool Orchestrator::token_matches(const std::string& execution_id, const std::string& token) const {
  auto rec = store_.execution(execution_id);
  if (!rec || rec->token.size() != token.size()) return false;
  unsigned char diff = 0;
  for (std::size_t i = 0; i < token.size(); ++i)
    diff |= static_cast<unsigned char>(rec->token[i] ^ token[i]);
  return diff == 0;
}

// ---------------------------------------------------------------------------
// experimenter-facing

void Orchestrator::enter_dev_mode(const std::string& execution_id) {
  Lock lock(mu_);
  auto& rt = active(execution_id, Errc::InvalidState);
  if (!holds_resources_for_dev(rt.state) || rt.phase != Phase::Held)
    throw Error(Errc::InvalidState, "dev mode needs a failed execution still holding resources; " +
                                        execution_id + " is " + std::string(fsm::to_string(rt.state)));
  if (rt.dev_mode) return;
  emit(rt, ExecutionEvent::DevModeEntered);
}

void Orchestrator::exit_dev_mode(const std::string& execution_id) {
  Lock lock(mu_);
  auto& rt = active(execution_id, Errc::AlreadyTerminal);
  if (!rt.dev_mode) throw Error(Errc::NotInDevMode, execution_id);
  emit(rt, ExecutionEvent::DevModeExited);
}

void Orchestrator::release_now(const std::string& execution_id) {
  {
    Lock lock(mu_);
    auto& rt = active(execution_id, Errc::AlreadyTerminal);
    if (!holds_resources_for_dev(rt.state) || rt.phase != Phase::Held)
      throw Error(Errc::InvalidState, execution_id + " is " + std::string(fsm::to_string(rt.state)));
    log(rt, "release requested by experimenter");
    emit(rt, ExecutionEvent::StartedReleasing);
  }
  dispatch();
}

provisioning::ProvisionReport Orchestrator::reprovision(const std::string& execution_id) {
  std::vector<ResourceHandle> vms;
  model::BenchmarkDefinition def;
  std::string token;
  {
    Lock lock(mu_);
    auto* rt = find_active(execution_id);
    if (!rt) {
      if (!store_.execution(execution_id)) throw Error(Errc::ExecutionNotFound, execution_id);
      throw Error(Errc::ResourcesAlreadyReleased, execution_id);
    }
    if (!rt->dev_mode) throw Error(Errc::NotInDevMode, execution_id);
    if (!holds_resources_for_dev(rt->state) || rt->phase != Phase::Held || rt->busy > 0)
      throw Error(Errc::InvalidState, execution_id + " is " + std::string(fsm::to_string(rt->state)));
    vms = vm_handles(*rt);
    if (vms.size() != rt->def.vms.size() ||
        std::any_of(rt->handles.begin(), rt->handles.end(),
                    [](const ResourceHandle& h) { return h.status != ResourceStatus::Ready; }))
      throw Error(Errc::InvalidState, execution_id + " has no complete set of ready resources");
    if (!prep_slots_.try_take()) throw Error(Errc::NoCapacity, "no preparing slot free");
    rt->holds_prep = true;
    rt->grace_deadline.reset();
    log(*rt, "reprovisioning requested by experimenter");
    emit(*rt, ExecutionEvent::StartedPreparing);
    max_prep_seen_ = std::max(max_prep_seen_, prep_slots_.used());
    rt->phase = Phase::Provisioning;
    rt->deadline = clock_.now() + Minutes{rt->def.timeout};
    ++rt->busy;
    def = rt->def;
    token = rt->token;
  }

  provisioning::ProvisionReport report;
  std::optional<Error> error;
  try {
    report = provision_all(execution_id, vms, def, token);
  } catch (const provisioning::ProvisionError& e) {
    report = e.report();
    error = e;
  } catch (const Error& e) {
    error = e;
  }
  {
    Lock lock(mu_);
    auto* rt = find_active(execution_id);
    if (rt) {
      for (const auto& s : report.steps)
        log(*rt, "reprovision " + s.recipe + " step " + std::to_string(s.index) + ": " +
                     std::string(provisioning::to_string(s.outcome)));
      if (rt->state == ExecutionState::Preparing) {
        if (error) {
          fail(*rt, ExecutionEvent::FailedOnPreparing, std::string("reprovisioning failed: ") + error->what());
        } else {
          emit(*rt, ExecutionEvent::FinishedPreparing);
          if (rt->holds_prep) prep_slots_.give_back();
          rt->holds_prep = false;
          start_running(*rt);
        }
      }
      task_done(*rt);
      start_queued();
    }
  }
  dispatch();
  if (error) throw *error;
  return report;
}

// ---------------------------------------------------------------------------
// views and recovery

nlohmann::json Orchestrator::actions(const store::ExecutionRecord& rec, const fsm::Replay& r) const {
  bool held = false;
  {
    Lock lock(mu_);
    if (auto* rt = find_active(rec.id)) held = rt->phase == Phase::Held && rt->busy == 0;
  }
  bool failed = holds_resources_for_dev(r.state) && held;
  return {{"enter_dev_mode", failed && !r.dev_mode},
          {"exit_dev_mode", r.dev_mode && !fsm::is_terminal(r.state) &&
                                r.state != ExecutionState::ReleasingResources},
          {"reprovision", failed && r.dev_mode},
          {"release_now", failed}};
}

nlohmann::json Orchestrator::view(const std::string& execution_id) const {
  auto rec = store_.execution(execution_id);
  if (!rec) throw Error(Errc::ExecutionNotFound, execution_id);
  auto events = store_.events(execution_id);
  auto r = fsm::replay(events);
  nlohmann::json j{{"id", rec->id},
                   {"benchmark_id", rec->benchmark_id},
                   {"cause", rec->cause},
                   {"created_at", format_instant(rec->created_at)},
                   {"state", fsm::to_string(r.state)},
                   {"displayed_status", fsm::displayed_status(events)},
                   {"dev_mode", r.dev_mode},
                   {"terminal", fsm::is_terminal(r.state)}};
  auto allowed = nlohmann::json::array();
  for (auto ev : fsm::allowed_events(r.state, r.dev_mode)) allowed.push_back(fsm::to_string(ev));
  j["allowed_events"] = allowed;
  j["actions"] = actions(*rec, r);
  auto evs = nlohmann::json::array();
  for (const auto& e : events) evs.push_back({{"at", format_instant(e.at)}, {"event", fsm::to_string(e.event)}});
  j["events"] = evs;
  auto res = nlohmann::json::array();
  for (const auto& h : store_.resources(execution_id)) res.push_back(h);
  j["resources"] = res;
  {
    Lock lock(mu_);
    if (auto* rt = find_active(execution_id)) {
      j["deadline"] = format_instant(rt->deadline);
      j["release_at"] = rt->grace_deadline && !rt->dev_mode ? nlohmann::json(format_instant(*rt->grace_deadline))
                                                            : nlohmann::json(nullptr);
    }
  }
  return j;
}

void Orchestrator::recover() {
  {
    Lock lock(mu_);
    for (const auto& rec : store_.executions()) {
      if (fsm::is_terminal(rec.state) || active_.contains(rec.id)) continue;
      auto doc = store_.benchmark(rec.benchmark_id);
      if (!doc) continue;
      auto events = store_.events(rec.id);
      auto replayed = fsm::replay(events);

      auto rt = std::make_unique<Runtime>();
      rt->id = rec.id;
      rt->def = model::from_json(*doc, drivers_.ids());
      rt->token = rec.token;
      rt->created_at = rec.created_at;
      rt->deadline = rec.created_at + Minutes{rt->def.timeout};
      rt->state = replayed.state;
      rt->dev_mode = replayed.dev_mode;
      rt->first_failure = replayed.first_failure;
      for (const auto& e : events) rt->seen.push_back(e.event);
      rt->handles = store_.resources(rec.id);
      for (const auto& h : rt->handles) {
        if (h.status == ResourceStatus::Released || !drivers_.contains(h.provider)) continue;
        drivers_.get(h.provider).adopt(h);
      }
      auto& ref = *rt;
      active_.emplace(rec.id, std::move(rt));
      log(ref, "server restarted; recovering from " + std::string(fsm::to_string(ref.state)));

      switch (ref.state) {
        case ExecutionState::WaitingForStartPreparing:
          ref.phase = Phase::Queued;
          prep_queue_.push_back(ref.id);
          break;
        case ExecutionState::Preparing:
          fail(ref, ExecutionEvent::FailedOnPreparing, "interrupted by server restart");
          break;
        case ExecutionState::WaitingForStartRunning:
        case ExecutionState::Running:
          fail(ref, ExecutionEvent::FailedOnRunning, "interrupted by server restart");
          break;
        case ExecutionState::WaitingForStartPostprocessing:
        case ExecutionState::Postprocessing:
          fail(ref, ExecutionEvent::FailedOnPostprocessing, "interrupted by server restart");
          break;
        case ExecutionState::FailedOnPreparing:
        case ExecutionState::FailedOnRunning:
        case ExecutionState::FailedOnPostprocessing: {
          ref.phase = Phase::Held;
          Instant failed_at = events.back().at;
          for (const auto& e : events)
            if (fsm::failure_state_of(e.event)) failed_at = e.at;
          ref.grace_deadline = failed_at + Minutes{ref.def.release_grace};
          break;
        }
        case ExecutionState::ReleasingResources:
          begin_release(ref);
          break;
        default:
          break;
      }
    }
    start_queued();
    reap();
  }
  dispatch();
}

std::size_t Orchestrator::active_count() const {
  Lock lock(mu_);
  return active_.size();
}

bool Orchestrator::idle() const {
  Lock lock(mu_);
  return active_.empty() && in_flight_ == 0;
}

void Orchestrator::drain() {
  Lock lock(mu_);
  idle_cv_.wait(lock, [&] { return in_flight_ == 0; });
}

std::size_t Orchestrator::preparing_in_use() const {
  Lock lock(mu_);
  return prep_slots_.used();
}

std::size_t Orchestrator::max_preparing_observed() const {
  Lock lock(mu_);
  return max_prep_seen_;
}

}  // namespace cwb::orchestration
