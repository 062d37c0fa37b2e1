#include <gtest/gtest.h>

#include <filesystem>

#include "cwb/error.hpp"
#include "sim_world.hpp"

namespace cwb::orchestration {
namespace {

using fsm::ExecutionEvent;
using testing::SimWorld;
using testing::quick_plan;
using nlohmann::json;

Errc code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an error";
  return Errc::BadRequest;
}

json timed_doc(int timeout, int grace) {
  auto doc = testing::fio_definition_doc();
  doc["timeout_minutes"] = timeout;
  doc["release_grace_minutes"] = grace;
  return doc;
}

providers::FaultPlan silent_agent() {
  auto p = quick_plan();
  p.run_duration = Seconds{1000000};
  return p;
}

TEST(Orchestrator, HappyPathOnSimulatedProvider) {
  SimWorld w(quick_plan());
  auto bm = w.add_benchmark(testing::fio_definition_doc());
  auto id = w.orch->trigger(bm);
  EXPECT_EQ(w.state(id), "PREPARING");
  w.run_for(Minutes{10});
  EXPECT_EQ(w.state(id), "FINISHED");
  EXPECT_EQ(w.shown(id), "FINISHED");
  EXPECT_EQ(w.event_names(id),
            (std::vector<std::string>{"CREATED", "STARTED_PREPARING", "FINISHED_PREPARING", "STARTED_RUNNING",
                                      "FINISHED_RUNNING", "STARTED_POSTPROCESSING", "FINISHED_POSTPROCESSING",
                                      "FINISHED_RELEASING_RESOURCES"}));
  EXPECT_EQ(w.store.observations(id, "cpu_model").size(), 1u);
  EXPECT_EQ(w.store.observations(id, "seq_write_bandwidth_kbps").size(), 120u);
  EXPECT_TRUE(w.drivers.leaked_resources().empty());
  EXPECT_TRUE(w.sim->outstanding().empty());
  EXPECT_TRUE(w.orch->idle());
  auto history = w.sim->command_history(w.store.resources(id)[0].id);
  EXPECT_NE(std::find(history.begin(), history.end(), "cwb-agent run"), history.end());
}

TEST(Orchestrator, AcquireFailureShowsFailedOnPreparingAfterCleanup) {
  auto plan = quick_plan();
  plan.acquire_failure_prob = 1.0;
  SimWorld w(plan);
  auto id = w.orch->trigger(w.add_benchmark(timed_doc(60, 30)));
  w.run_for(Minutes{1});
  EXPECT_EQ(w.state(id), "FAILED_ON_PREPARING");
  w.run_until(testing::kEpoch + Minutes{30} - Seconds{1});
  EXPECT_EQ(w.state(id), "FAILED_ON_PREPARING");
  w.run_for(Seconds{1});
  EXPECT_EQ(w.state(id), "FINISHED");
  EXPECT_EQ(w.shown(id), "FAILED ON PREPARING");
  EXPECT_EQ(*w.at(id, ExecutionEvent::ReleaseGraceElapsed), Minutes{30});
}

TEST(Orchestrator, RunTimeoutThenGraceRelease) {
  SimWorld w(silent_agent());
  auto id = w.orch->trigger(w.add_benchmark(timed_doc(10, 5)));
  w.run_for(Minutes{60});
  EXPECT_EQ(*w.at(id, ExecutionEvent::RunTimeoutElapsed), Minutes{10});
  EXPECT_EQ(*w.at(id, ExecutionEvent::ReleaseGraceElapsed), Minutes{15});
  EXPECT_EQ(w.state(id), "FINISHED");
  EXPECT_EQ(w.shown(id), "FAILED ON RUNNING");
  EXPECT_TRUE(w.drivers.leaked_resources().empty());
}

TEST(Orchestrator, DevModeHoldsResourcesUntilExit) {
  SimWorld w(silent_agent());
  auto id = w.orch->trigger(w.add_benchmark(timed_doc(10, 5)));
  w.run_until(testing::kEpoch + Minutes{11});
  ASSERT_EQ(w.state(id), "FAILED_ON_RUNNING");
  w.orch->enter_dev_mode(id);
  EXPECT_TRUE(w.store.execution(id)->dev_mode);
  w.run_until(testing::kEpoch + Minutes{120});
  EXPECT_EQ(w.state(id), "FAILED_ON_RUNNING");
  EXPECT_FALSE(w.sim->outstanding().empty());
  EXPECT_FALSE(w.at(id, ExecutionEvent::ReleaseGraceElapsed));

  w.orch->exit_dev_mode(id);
  w.run_for(Seconds{1});
  EXPECT_EQ(w.state(id), "FINISHED");
  EXPECT_TRUE(w.sim->outstanding().empty());
}

TEST(Orchestrator, ReleaseNowSkipsGrace) {
  SimWorld w(silent_agent());
  auto id = w.orch->trigger(w.add_benchmark(timed_doc(10, 30)));
  w.run_until(testing::kEpoch + Minutes{11});
  w.orch->enter_dev_mode(id);
  w.orch->release_now(id);
  EXPECT_EQ(w.event_names(id).back(), "FINISHED_RELEASING_RESOURCES");
  auto names = w.event_names(id);
  EXPECT_NE(std::find(names.begin(), names.end(), "STARTED_RELEASING"), names.end());
  EXPECT_EQ(w.shown(id), "FAILED ON RUNNING");
}

TEST(Orchestrator, DevModeGuards) {
  SimWorld w(quick_plan());
  auto id = w.orch->trigger(w.add_benchmark(testing::fio_definition_doc()));
  EXPECT_EQ(code_of([&] { w.orch->enter_dev_mode(id); }), Errc::InvalidState);
  w.run_for(Minutes{10});
  ASSERT_EQ(w.state(id), "FINISHED");
  EXPECT_EQ(code_of([&] { w.orch->enter_dev_mode(id); }), Errc::InvalidState);
  EXPECT_EQ(code_of([&] { w.orch->release_now(id); }), Errc::AlreadyTerminal);
  EXPECT_EQ(code_of([&] { w.orch->reprovision(id); }), Errc::ResourcesAlreadyReleased);
  EXPECT_EQ(code_of([&] { w.orch->enter_dev_mode("exec-nope"); }), Errc::ExecutionNotFound);
}

TEST(Orchestrator, TriggerGuards) {
  SimWorld w(quick_plan());
  auto doc = testing::fio_definition_doc();
  auto def = model::validate_definition(doc, w.drivers.ids(), {});
  def.id = "bm-off";
  def.active = false;
  w.store.put_benchmark(def);
  EXPECT_EQ(code_of([&] { w.orch->trigger("bm-off"); }), Errc::BenchmarkInactive);
  EXPECT_EQ(code_of([&] { w.orch->trigger("bm-missing"); }), Errc::BenchmarkNotFound);
}

TEST(Orchestrator, AgentNotificationsAreIdempotent) {
  SimWorld w(silent_agent());
  auto id = w.orch->trigger(w.add_benchmark(testing::fio_definition_doc()));
  w.run_for(Minutes{1});
  ASSERT_EQ(w.state(id), "RUNNING");
  EXPECT_EQ(code_of([&] { w.orch->notify(id, ExecutionEvent::FinishedPostprocessing); }), Errc::Conflict);
  EXPECT_EQ(code_of([&] { w.orch->notify(id, ExecutionEvent::StartedReleasing); }), Errc::BadRequest);
  auto first = w.orch->notify(id, ExecutionEvent::FinishedRunning);
  EXPECT_FALSE(first.duplicate);
  EXPECT_EQ(first.displayed_status, "POSTPROCESSING");
  auto second = w.orch->notify(id, ExecutionEvent::FinishedRunning);
  EXPECT_TRUE(second.duplicate);
  auto names = w.event_names(id);
  EXPECT_EQ(std::count(names.begin(), names.end(), "FINISHED_RUNNING"), 1);
  w.run_for(Minutes{1});
  EXPECT_EQ(w.state(id), "FINISHED");
  EXPECT_EQ(code_of([&] { w.orch->notify(id, ExecutionEvent::FinishedRunning); }), Errc::Conflict);
  EXPECT_EQ(code_of([&] { w.orch->notify("exec-x", ExecutionEvent::FinishedRunning); }), Errc::ExecutionNotFound);
}

TEST(Orchestrator, ResultsOnlyWhileRunningOrPostprocessing) {
  SimWorld w(silent_agent());
  auto id = w.orch->trigger(w.add_benchmark(testing::fio_definition_doc()));
  EXPECT_EQ(code_of([&] { w.orch->record(id, "cpu_model", "x", {}); }), Errc::ExecutionNotAcceptingResults);
  w.run_for(Minutes{1});
  w.orch->record(id, "cpu_model", "Xeon", {});
  w.orch->record(id, "seq_write_bandwidth_kbps", 3500.0, 500);
  EXPECT_EQ(code_of([&] { w.orch->record(id, "seq_write_bandwidth_kbps", "fast", {}); }), Errc::ScaleMismatch);
  EXPECT_EQ(code_of([&] { w.orch->ingest_csv(id, "metric,value\nlatency,1\n", "b1"); }), Errc::RowError);
  EXPECT_EQ(w.store.observation_count(id), 2u);
  EXPECT_EQ(w.orch->ingest_csv(id, "metric,value,offset_ms\nseq_write_bandwidth_kbps,1,0\n", "b1").count, 1u);
  EXPECT_TRUE(w.orch->ingest_csv(id, "metric,value,offset_ms\nseq_write_bandwidth_kbps,1,0\n", "b1").duplicate);
  EXPECT_EQ(w.store.observation_count(id), 3u);
}

TEST(Orchestrator, SlotSafetyUnderFiftyTriggers) {
  OrchestratorOptions opts;
  opts.max_preparing = 3;
  SimWorld w(quick_plan(5), opts);
  auto bm = w.add_benchmark(testing::fio_definition_doc());
  std::vector<std::string> ids;
  for (int i = 0; i < 50; ++i) ids.push_back(w.orch->trigger(bm));
  std::size_t peak = 0;
  for (int step = 0; step < 2000 && !w.orch->idle(); ++step) {
    peak = std::max(peak, w.store.executions({.state = "PREPARING"}).size());
    w.orch->advance();
    peak = std::max(peak, w.store.executions({.state = "PREPARING"}).size());
    auto next = w.orch->next_wakeup();
    if (!next) break;
    w.clock.set(std::max(*next, w.clock.now() + Seconds{1}));
  }
  EXPECT_LE(peak, 3u);
  EXPECT_EQ(peak, 3u);
  EXPECT_LE(w.orch->max_preparing_observed(), 3u);
  for (const auto& id : ids) EXPECT_EQ(w.state(id), "FINISHED") << id;
}

TEST(Orchestrator, SimultaneousDeadlinesFireInDeadlineThenIdOrder) {
  SimWorld w(silent_agent());
  auto bm = w.add_benchmark(timed_doc(10, 5));
  auto a = w.orch->trigger(bm);
  auto b = w.orch->trigger(bm);
  ASSERT_LT(a, b);
  w.run_for(Minutes{1});
  // Nothing happens until both deadlines are overdue, then one tick fires both.
  w.clock.set(testing::kEpoch + Minutes{12});
  w.orch->advance();
  auto cursor_of = [&](const std::string& id) {
    for (const auto& l : w.store.log_after(id, 0))
      if (l.text.find("RUN_TIMEOUT_ELAPSED") != std::string::npos) return l.cursor;
    return std::int64_t{-1};
  };
  ASSERT_GT(cursor_of(a), 0);
  EXPECT_LT(cursor_of(a), cursor_of(b));
  EXPECT_EQ(*w.at(a, ExecutionEvent::RunTimeoutElapsed), Minutes{12});
}

TEST(Orchestrator, MultiVmBenchmarkQueuesPostprocessing) {
  OrchestratorOptions opts;
  opts.max_postprocessing = 1;
  SimWorld w(quick_plan(), opts);
  auto doc = testing::fio_definition_doc();
  auto vm2 = doc["vms"][0];
  vm2["role"] = "target";
  doc["vms"].push_back(vm2);
  auto bm = w.add_benchmark(doc);
  auto a = w.orch->trigger(bm);
  auto b = w.orch->trigger(bm);
  w.run_for(Minutes{10});
  for (const auto& id : {a, b}) {
    EXPECT_EQ(w.state(id), "FINISHED") << id;
    auto names = w.event_names(id);
    EXPECT_EQ(std::count(names.begin(), names.end(), "FINISHED_RUNNING"), 1);
    EXPECT_EQ(w.store.resources(id).size(), 4u);  // two VMs, two volumes
  }
  EXPECT_TRUE(w.drivers.leaked_resources().empty());
}

TEST(Orchestrator, ReleaseFailureLeavesOnlyOwnHandlesLeaked) {
  auto plan = quick_plan();
  plan.release_failure_prob = 1.0;
  SimWorld w(plan);
  auto id = w.orch->trigger(w.add_benchmark(testing::fio_definition_doc()));
  w.run_for(Minutes{10});
  EXPECT_EQ(w.state(id), "FAILED_ON_RELEASING");
  EXPECT_EQ(w.shown(id), "FAILED ON RELEASING");
  auto leaked = w.drivers.leaked_resources();
  ASSERT_FALSE(leaked.empty());
  for (const auto& h : leaked) EXPECT_EQ(h.owner, id);
}

TEST(Orchestrator, EventLogsReplayToStoredState) {
  auto plan = quick_plan(9);
  plan.acquire_failure_prob = plan.provision_failure_prob = plan.run_failure_prob = 0.3;
  SimWorld w(plan);
  auto bm = w.add_benchmark(timed_doc(10, 5));
  for (int i = 0; i < 30; ++i) w.orch->trigger(bm);
  w.run_for(Minutes{60});
  for (const auto& rec : w.store.executions()) {
    auto events = w.store.events(rec.id);
    EXPECT_EQ(fsm::replay(events).state, rec.state);
    EXPECT_EQ(fsm::displayed_status(events), rec.displayed_status);
    EXPECT_EQ(w.orch->view(rec.id)["displayed_status"], rec.displayed_status);
  }
}

// Local driver with recipes edited between attempts.
struct ReprovisionFixture : ::testing::Test {
  SimWorld w{quick_plan(), {}, ":memory:", true};
  std::string bm;

  void SetUp() override {
    put_recipe("exit 3");
    auto doc = timed_doc(30, 10);
    doc["vms"][0]["provider"] = "local";
    doc["vms"][0]["extra_resources"] = json::object();
    doc["provisioning"][0]["recipe"] = "probe@1.0.0";
    doc["provisioning"][0]["attributes"] = json::object();
    bm = w.add_benchmark(doc);
  }

  void put_recipe(const std::string& command) {
    w.recipes.add(provisioning::parse_recipe(json{
                      {"name", "probe"},
                      {"version", "1.0.0"},
                      {"steps", {{{"kind", "shell"},
                                  {"command", command},
                                  {"guard", "test -f \"$CWB_ROOT/probe.ok\""}}}}}),
                  true);
  }
};

TEST_F(ReprovisionFixture, FixedRecipeProceedsToRunning) {
  auto id = w.orch->trigger(bm);
  w.run_for(Seconds{1});
  ASSERT_EQ(w.state(id), "FAILED_ON_PREPARING");
  EXPECT_EQ(code_of([&] { w.orch->reprovision(id); }), Errc::NotInDevMode);
  w.orch->enter_dev_mode(id);
  EXPECT_EQ(code_of([&] { w.orch->reprovision(id); }), Errc::StepFailed);
  ASSERT_EQ(w.state(id), "FAILED_ON_PREPARING");
  put_recipe("touch \"$CWB_ROOT/probe.ok\"");
  auto report = w.orch->reprovision(id);
  EXPECT_TRUE(report.ok());
  EXPECT_EQ(report.count(provisioning::StepOutcome::Changed), 1u);
  EXPECT_EQ(w.state(id), "RUNNING");
  EXPECT_EQ(w.shown(id), "FAILED ON PREPARING");
  auto names = w.event_names(id);
  EXPECT_EQ(std::count(names.begin(), names.end(), "STARTED_PREPARING"), 3);
  w.orch->notify(id, ExecutionEvent::FailedOnRunning);
  w.orch->release_now(id);
  EXPECT_EQ(w.state(id), "FINISHED");
}

TEST_F(ReprovisionFixture, GraceElapsedBeforeDevModeMeansReleased) {
  auto id = w.orch->trigger(bm);
  w.run_for(Minutes{11});
  ASSERT_EQ(w.state(id), "FINISHED");
  EXPECT_EQ(code_of([&] { w.orch->reprovision(id); }), Errc::ResourcesAlreadyReleased);
  EXPECT_EQ(code_of([&] { w.orch->enter_dev_mode(id); }), Errc::InvalidState);
}

TEST(Orchestrator, RestartMarksInterruptedExecutionsFailed) {
  auto path = std::filesystem::temp_directory_path() / "cwb-recovery-test.db";
  std::filesystem::remove(path);
  std::string running, queued;
  {
    OrchestratorOptions opts;
    opts.max_preparing = 1;
    SimWorld w(silent_agent(), opts, path.string());
    auto bm = w.add_benchmark(timed_doc(60, 5), "bm-r");
    running = w.orch->trigger(bm);
    w.run_for(Minutes{1});
    ASSERT_EQ(w.state(running), "RUNNING");
  }
  SimWorld w(silent_agent(), {}, path.string());
  w.clock.set(testing::kEpoch + Minutes{2});
  w.orch->recover();
  EXPECT_EQ(w.state(running), "FAILED_ON_RUNNING");
  EXPECT_EQ(w.sim->outstanding().size(), 2u);  // adopted VM and volume
  w.run_for(Minutes{10});
  EXPECT_EQ(w.state(running), "FINISHED");
  EXPECT_EQ(w.shown(running), "FAILED ON RUNNING");
  EXPECT_TRUE(w.sim->outstanding().empty());
  auto next = w.orch->trigger("bm-r");
  EXPECT_NE(next, running);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace cwb::orchestration
