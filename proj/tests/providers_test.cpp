#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <numeric>

#include "cwb/error.hpp"
#include "cwb/local_driver.hpp"
#include "cwb/simulated_driver.hpp"

namespace cwb::providers {
namespace {

model::VmSpec vm_spec(const std::string& provider, nlohmann::json extra = nlohmann::json::object()) {
  return {"driver", provider, "eu-west-1", "m1.small", "ubuntu-14.04", std::move(extra)};
}

Errc code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an error";
  return Errc::BadRequest;
}

class LocalDriverTest : public ::testing::Test {
 protected:
  LocalDriver driver{LocalDriverOptions{}};

  std::string ready_vm(const std::string& owner = "exec-1") {
    auto handles = driver.acquire(vm_spec("local"), owner);
    EXPECT_EQ(handles.size(), 1u);
    EXPECT_EQ(handles[0].status, ResourceStatus::Requested);
    auto ready = driver.poll_ready(handles[0].id);
    EXPECT_TRUE(ready);
    return handles[0].id;
  }
};

TEST_F(LocalDriverTest, EchoReturnsOutput) {
  auto id = ready_vm();
  auto r = driver.exec(id, "echo hi", ExecMode::Blocking);
  EXPECT_EQ(r.exit_code, 0);
  EXPECT_EQ(r.stdout_text, "hi\n");
}

TEST_F(LocalDriverTest, CommandsRunInsideSandbox) {
  auto id = ready_vm();
  auto r = driver.exec(id, "printf %s \"$CWB_ROOT\"; exit 3", ExecMode::Blocking);
  EXPECT_EQ(r.exit_code, 3);
  EXPECT_EQ(std::filesystem::path(r.stdout_text), driver.sandbox(id));
}

TEST_F(LocalDriverTest, SyncIsIdempotentAndKeepsModes) {
  auto id = ready_vm();
  std::vector<Payload> files{{"/cwb/runner", "#!/bin/sh\necho run\n", true},
                             {"/cwb/config", "{}\n", false}};
  auto first = driver.sync(id, files);
  EXPECT_EQ(first.written.size(), 2u);
  auto hash = driver.content_hash(id);
  auto second = driver.sync(id, files);
  EXPECT_TRUE(second.noop());
  EXPECT_EQ(second.unchanged.size(), 2u);
  EXPECT_EQ(driver.content_hash(id), hash);

  auto runner = driver.sandbox(id) / "cwb/runner";
  auto perms = std::filesystem::status(runner).permissions();
  EXPECT_NE(perms & std::filesystem::perms::owner_exec, std::filesystem::perms::none);
  EXPECT_EQ(driver.exec(id, "\"$CWB_ROOT/cwb/runner\"", ExecMode::Blocking).stdout_text, "run\n");

  files[0].executable = false;
  EXPECT_EQ(driver.sync(id, files).written, std::vector<std::string>{"/cwb/runner"});
  EXPECT_NE(driver.content_hash(id), hash);
}

TEST_F(LocalDriverTest, RejectsEscapingPaths) {
  auto id = ready_vm();
  EXPECT_EQ(code_of([&] { driver.sync(id, {{"/../outside", "x", false}}); }), Errc::BadRequest);
}

TEST_F(LocalDriverTest, ReleaseRemovesSandboxAndIsIdempotent) {
  auto id = ready_vm();
  auto dir = driver.sandbox(id);
  ASSERT_TRUE(std::filesystem::exists(dir));
  driver.release(id);
  EXPECT_FALSE(std::filesystem::exists(dir));
  EXPECT_NO_THROW(driver.release(id));
  EXPECT_EQ(code_of([&] { driver.exec(id, "true", ExecMode::Blocking); }), Errc::ResourceReleased);
  EXPECT_EQ(code_of([&] { driver.sync(id, {}); }), Errc::ResourceReleased);
  EXPECT_TRUE(driver.outstanding().empty());
}

TEST_F(LocalDriverTest, ReleaseKillsFireAndForgetProcesses) {
  auto id = ready_vm();
  driver.exec(id, "sleep 30", ExecMode::FireAndForget);
  auto t0 = std::chrono::steady_clock::now();
  driver.release(id);
  EXPECT_LT(std::chrono::steady_clock::now() - t0, std::chrono::seconds(5));
}

TEST(LocalDriver, CommandTimeoutIsConnectionLost) {
  LocalDriverOptions opts;
  opts.command_timeout = std::chrono::seconds(1);
  LocalDriver driver(opts);
  auto id = driver.acquire(vm_spec("local"), "e")[0].id;
  driver.poll_ready(id);
  EXPECT_EQ(code_of([&] { driver.exec(id, "sleep 5", ExecMode::Blocking); }), Errc::ConnectionLost);
}

TEST(LocalDriver, ExtraResourcesBecomeVolumes) {
  LocalDriver driver{LocalDriverOptions{}};
  auto handles = driver.acquire(vm_spec("local", {{"ebs_gb", 20}}), "e");
  ASSERT_EQ(handles.size(), 2u);
  EXPECT_EQ(handles[1].kind, ResourceKind::BlockStorage);
  driver.close_owner("e");
  EXPECT_EQ(driver.leaked_resources().size(), 2u);
  for (const auto& h : handles) driver.release(h.id);
  EXPECT_TRUE(driver.leaked_resources().empty());
}

TEST(LocalDriver, AdoptReattachesAfterRestart) {
  auto root = std::filesystem::temp_directory_path() / "cwb-adopt-test";
  std::filesystem::remove_all(root);
  ResourceHandle h;
  {
    LocalDriver first(LocalDriverOptions{root});
    h = first.acquire(vm_spec("local"), "e")[0];
  }
  LocalDriver second(LocalDriverOptions{root});
  second.adopt(h);
  ASSERT_EQ(second.outstanding().size(), 1u);
  second.release(h.id);
  EXPECT_FALSE(std::filesystem::exists(second.sandbox(h.id)));
  std::filesystem::remove_all(root);
}

class SimulatedDriverTest : public ::testing::Test {
 protected:
  SimulatedClock clock{make_instant(2014, 3, 1, 12, 0, 0)};
};

TEST_F(SimulatedDriverTest, AcquireFailureAlwaysFails) {
  FaultPlan plan;
  plan.acquire_failure_prob = 1.0;
  SimulatedDriver driver(plan, clock);
  EXPECT_EQ(code_of([&] { driver.acquire(vm_spec("simulated"), "e"); }), Errc::AcquireFailed);
  EXPECT_TRUE(driver.outstanding().empty());
}

TEST_F(SimulatedDriverTest, BlockStorageHandleForEbs) {
  SimulatedDriver driver(FaultPlan{}, clock);
  auto handles = driver.acquire(vm_spec("simulated", {{"ebs_gb", 20}}), "e");
  ASSERT_EQ(handles.size(), 2u);
  EXPECT_EQ(handles[0].kind, ResourceKind::Vm);
  EXPECT_EQ(handles[1].kind, ResourceKind::BlockStorage);
  EXPECT_EQ(handles[1].role, "driver");
}

TEST_F(SimulatedDriverTest, FixedLatencyReadiness) {
  FaultPlan plan;
  plan.acquire_latency_min = plan.acquire_latency_max = Seconds{3};
  SimulatedDriver driver(plan, clock);
  auto id = driver.acquire(vm_spec("simulated"), "e")[0].id;
  auto start = clock.now();
  EXPECT_FALSE(driver.poll_ready(id));
  clock.advance(Seconds{2});
  EXPECT_FALSE(driver.poll_ready(id));
  auto h = driver.await_ready(id, clock);
  EXPECT_EQ(h.status, ResourceStatus::Ready);
  EXPECT_EQ(clock.now() - start, Seconds{3});
}

TEST_F(SimulatedDriverTest, ReadinessTimeout) {
  FaultPlan plan;
  plan.acquire_latency_min = plan.acquire_latency_max = Seconds{400};
  SimulatedDriver driver(plan, clock);
  auto id = driver.acquire(vm_spec("simulated"), "e")[0].id;
  clock.advance(Seconds{300});
  EXPECT_EQ(code_of([&] { driver.poll_ready(id); }), Errc::ReadinessTimeout);
}

TEST_F(SimulatedDriverTest, LongCommandIsConnectionLost) {
  FaultPlan plan;
  plan.acquire_latency_min = plan.acquire_latency_max = Seconds{0};
  SimulatedDriver driver(plan, clock);
  auto id = driver.acquire(vm_spec("simulated"), "e")[0].id;
  driver.poll_ready(id);
  EXPECT_EQ(driver.exec(id, "sleep 10", ExecMode::Blocking).exit_code, 0);
  EXPECT_EQ(code_of([&] { driver.exec(id, "sleep 601", ExecMode::Blocking); }), Errc::ConnectionLost);
}

TEST_F(SimulatedDriverTest, ReleaseFailureLeaksAfterOwnerCloses) {
  FaultPlan plan;
  plan.release_failure_prob = 1.0;
  SimulatedDriver driver(plan, clock);
  auto id = driver.acquire(vm_spec("simulated"), "e")[0].id;
  EXPECT_EQ(code_of([&] { driver.release(id); }), Errc::ReleaseFailed);
  EXPECT_TRUE(driver.leaked_resources().empty());
  driver.close_owner("e");
  auto leaked = driver.leaked_resources();
  ASSERT_EQ(leaked.size(), 1u);
  EXPECT_EQ(leaked[0].id, id);
}

TEST_F(SimulatedDriverTest, VirtualAgentReportsThroughMessages) {
  FaultPlan plan;
  plan.acquire_latency_min = plan.acquire_latency_max = Seconds{0};
  plan.run_duration = Seconds{20};
  SimulatedDriver driver(plan, clock);
  auto id = driver.acquire(vm_spec("simulated"), "e")[0].id;
  driver.poll_ready(id);
  driver.sync(id, {{"/cwb/config", R"({"execution_id":"exec-7"})", false}});
  driver.exec(id, "cwb-agent run", ExecMode::FireAndForget);
  EXPECT_TRUE(driver.poll_messages(clock.now()).empty());
  clock.advance(Seconds{20});
  auto msgs = driver.poll_messages(clock.now());
  ASSERT_EQ(msgs.size(), 1u);
  EXPECT_EQ(msgs[0].execution_id, "exec-7");
  EXPECT_EQ(msgs[0].event, fsm::ExecutionEvent::FinishedRunning);

  driver.exec(id, "cwb-agent postprocess", ExecMode::FireAndForget);
  clock.advance(Seconds{2});
  msgs = driver.poll_messages(clock.now());
  ASSERT_EQ(msgs.size(), 2u);
  EXPECT_EQ(msgs[0].kind, AgentMessage::Kind::MetricsCsv);
  EXPECT_EQ(msgs[0].csv.rfind("metric,value,offset_ms\n", 0), 0u);
  EXPECT_EQ(msgs[1].event, fsm::ExecutionEvent::FinishedPostprocessing);
}

std::vector<std::string> trace_of(const FaultPlan& plan, Instant start) {
  SimulatedClock clock(start);
  SimulatedDriver driver(plan, clock);
  std::vector<std::string> out;
  for (int i = 0; i < 40; ++i) {
    try {
      auto hs = driver.acquire(vm_spec("simulated"), "e" + std::to_string(i));
      for (const auto& h : hs) out.push_back(h.id + " " + format_instant(*driver.ready_at(h.id)));
      try {
        driver.release(hs[0].id);
        out.push_back("released");
      } catch (const Error& e) {
        out.push_back(e.what());
      }
    } catch (const Error& e) {
      out.push_back(e.what());
    }
  }
  return out;
}

TEST(SimulatedDriver, IdenticalSeedsGiveIdenticalBehaviour) {
  FaultPlan plan;
  plan.seed = 42;
  plan.acquire_failure_prob = plan.release_failure_prob = 0.3;
  auto t = make_instant(2014, 1, 1, 0, 0, 0);
  EXPECT_EQ(trace_of(plan, t), trace_of(plan, t));
  auto other = plan;
  other.seed = 43;
  EXPECT_NE(trace_of(plan, t), trace_of(other, t));
}

TEST(SimulatedDriver, ProbabilityOutOfRangeIsBadConfig) {
  FaultPlan plan;
  plan.run_failure_prob = 1.5;
  EXPECT_EQ(code_of([&] { plan.validate(); }), Errc::BadConfig);
}

TEST(SyntheticBandwidth, MeanAndDropFrequency) {
  SyntheticBandwidth bw;
  bw.amplitude = 0;
  bw.noise = 0;
  std::mt19937_64 rng(7);
  const std::size_t n = 20000;
  auto xs = bw.generate(rng, n);
  double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  EXPECT_NEAR(mean, bw.mean_kbps, 0.05 * bw.mean_kbps);
  double high = *std::max_element(xs.begin(), xs.end());
  auto drops = std::count_if(xs.begin(), xs.end(), [&](double x) { return x < 0.5 * high; });
  double p = bw.drop_prob;
  double sigma = std::sqrt(n * p * (1 - p));
  EXPECT_NEAR(static_cast<double>(drops), n * p, 3 * sigma);
}

TEST(SyntheticBandwidth, DefaultTraceIsPositiveWithExpectedMean) {
  SyntheticBandwidth bw;
  std::mt19937_64 rng(11);
  auto xs = bw.generate(rng, 4000);
  EXPECT_GT(*std::min_element(xs.begin(), xs.end()), 0.0);
  double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / xs.size();
  EXPECT_NEAR(mean, bw.mean_kbps, 0.05 * bw.mean_kbps);
}

}  // namespace
}  // namespace cwb::providers
