#include <gtest/gtest.h>

#include <cmath>
#include <deque>
#include <filesystem>
#include <fstream>

#include "cwb/agent.hpp"

namespace cwb::agent {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using Ev = fsm::ExecutionEvent;

// Replays scripted outcomes; an empty script answers 200 with `fallback`.
struct StubTransport : Transport {
  struct Outcome {
    bool unreachable = false;
    Response resp;
  };
  std::deque<Outcome> script;
  std::vector<Request> sent;
  bool down = false;
  Response fallback{200, R"({"displayed_status":"RUNNING","state":"RUNNING","duplicate":false,"count":1})"};

  Response send(const Request& req) override {
    sent.push_back(req);
    if (down) throw Error(Errc::Transport, "connection refused");
    if (script.empty()) return fallback;
    auto o = script.front();
    script.pop_front();
    if (o.unreachable) throw Error(Errc::Transport, "connection refused");
    return o.resp;
  }
};

AgentConfig config() {
  return {"http://127.0.0.1:1", "exec-7", "s3cr3t-token-value", "driver"};
}

class AgentTest : public ::testing::Test {
 protected:
  void SetUp() override {
    root = fs::temp_directory_path() /
           ("cwb-agent-" + std::to_string(::getpid()) + "-" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(root);
    fs::create_directories(root / "cwb");
  }
  void TearDown() override { fs::remove_all(root); }

  Client client(RetryPolicy policy = {}) {
    return Client(config(), stub, root / "cwb" / "spool", policy,
                  [this](std::chrono::milliseconds d) { sleeps.push_back(d); },
                  [this](const std::string& l) { lines.push_back(l); }, 42);
  }

  std::vector<fs::path> spool_files() const {
    std::vector<fs::path> out;
    if (fs::exists(root / "cwb" / "spool"))
      for (const auto& e : fs::directory_iterator(root / "cwb" / "spool")) out.push_back(e.path());
    return out;
  }

  void script(const std::string& name, const std::string& body) {
    std::ofstream(root / "cwb" / name) << body;
  }

  std::vector<std::string> events_sent() const {
    std::vector<std::string> out;
    for (const auto& r : stub.sent)
      if (r.path.ends_with("/state")) out.push_back(json::parse(r.body).at("event"));
    return out;
  }

  fs::path root;
  StubTransport stub;
  std::vector<std::chrono::milliseconds> sleeps;
  std::vector<std::string> lines;
};

TEST(Backoff, DoublesWithinJitterBounds) {
  RetryPolicy p;
  std::mt19937_64 rng(1);
  for (int retry = 1; retry <= 4; ++retry) {
    double nominal = 1000.0 * std::pow(2.0, retry - 1);
    double sum = 0;
    const int n = 2000;
    for (int i = 0; i < n; ++i) {
      auto d = backoff(p, retry, rng).count();
      ASSERT_GE(d, static_cast<std::int64_t>(nominal * 0.8) - 1);
      ASSERT_LE(d, static_cast<std::int64_t>(nominal * 1.2));
      sum += static_cast<double>(d);
    }
    EXPECT_NEAR(sum / n, nominal, nominal * 0.02);
  }
}

TEST_F(AgentTest, NotifyCarriesEventAndToken) {
  auto c = client();
  auto ack = c.notify(Ev::FinishedRunning);
  EXPECT_EQ(ack.displayed_status, "RUNNING");
  ASSERT_EQ(stub.sent.size(), 1u);
  EXPECT_EQ(stub.sent[0].method, "PUT");
  EXPECT_EQ(stub.sent[0].path, "/agent/executions/exec-7/state");
  EXPECT_EQ(json::parse(stub.sent[0].body).at("event"), "FINISHED_RUNNING");
  EXPECT_EQ(stub.sent[0].headers.at("Authorization"), "Bearer s3cr3t-token-value");
}

TEST_F(AgentTest, UnreachableForThreeAttemptsSpoolsAndFails) {
  stub.down = true;
  auto c = client(RetryPolicy{3});
  try {
    c.notify(Ev::FinishedRunning);
    FAIL() << "expected Transport";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::Transport);
  }
  EXPECT_EQ(stub.sent.size(), 3u);
  EXPECT_EQ(sleeps.size(), 2u);
  auto files = spool_files();
  ASSERT_EQ(files.size(), 1u);
  std::ifstream in(files[0]);
  auto doc = json::parse(in);
  EXPECT_EQ(doc.at("path"), "/agent/executions/exec-7/state");
  EXPECT_EQ(json::parse(doc.at("body").get<std::string>()).at("event"), "FINISHED_RUNNING");
}

TEST_F(AgentTest, RunExitsNonZeroWhenReportSpooled) {
  script("runner", "exit 0\n");
  stub.down = true;
  auto c = client(RetryPolicy{3});
  int code = run_callback(c, root, [](const std::string&) {});
  EXPECT_NE(code, 0);
  EXPECT_EQ(spool_files().size(), 1u);
}

TEST_F(AgentTest, DefaultPolicyMakesFiveAttemptsWithDoublingDelays) {
  stub.down = true;
  auto c = client();
  EXPECT_THROW(c.notify(Ev::FinishedRunning), Error);
  EXPECT_EQ(stub.sent.size(), 5u);
  ASSERT_EQ(sleeps.size(), 4u);
  for (std::size_t i = 0; i < sleeps.size(); ++i) {
    double nominal = 1000.0 * (1 << i);
    EXPECT_GE(sleeps[i].count(), nominal * 0.8 - 1);
    EXPECT_LE(sleeps[i].count(), nominal * 1.2);
  }
}

TEST_F(AgentTest, ServerErrorsAreRetriedUntilSuccess) {
  stub.script.push_back({true, {}});
  stub.script.push_back({false, {503, "busy"}});
  auto c = client();
  EXPECT_NO_THROW(c.notify(Ev::FinishedRunning));
  EXPECT_EQ(stub.sent.size(), 3u);
  EXPECT_TRUE(spool_files().empty());
}

TEST_F(AgentTest, RejectionsAreSurfacedWithoutRetry) {
  struct Case {
    int status;
    std::string body;
    Errc expected;
  };
  std::vector<Case> cases = {
      {401, R"({"error":{"code":"Unauthorized","detail":"bad token"}})", Errc::Unauthorized},
      {409, R"({"error":{"code":"Conflict","detail":"RUNNING does not accept STARTED_RUNNING"}})", Errc::Conflict},
      {404, "", Errc::ExecutionNotFound},
      {422, R"({"error":{"code":"UnknownMetric","detail":"latency"}})", Errc::UnknownMetric},
  };
  for (const auto& k : cases) {
    stub.sent.clear();
    stub.script.push_back({false, {k.status, k.body}});
    auto c = client();
    try {
      c.notify(Ev::FinishedRunning);
      ADD_FAILURE() << "status " << k.status << " accepted";
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), k.expected) << k.status;
    }
    EXPECT_EQ(stub.sent.size(), 1u) << k.status;
  }
  EXPECT_TRUE(spool_files().empty());
}

TEST_F(AgentTest, TokenNeverLoggedOrSpooled) {
  stub.down = true;
  auto c = client(RetryPolicy{2});
  EXPECT_THROW(c.submit("cpu_model", "x"), Error);
  stub.down = false;
  stub.script.push_back({false, {401, R"({"error":{"code":"Unauthorized","detail":"token mismatch"}})"}});
  EXPECT_THROW(c.notify(Ev::FinishedRunning), Error);
  ASSERT_FALSE(lines.empty());
  for (const auto& l : lines) EXPECT_EQ(l.find(config().token), std::string::npos) << l;
  for (const auto& f : spool_files()) {
    std::ifstream in(f);
    std::string text((std::istreambuf_iterator<char>(in)), {});
    EXPECT_EQ(text.find(config().token), std::string::npos);
  }
}

TEST_F(AgentTest, RetriedSubmissionsReuseTheirIds) {
  stub.script.push_back({true, {}});
  stub.script.push_back({true, {}});
  auto c = client();
  c.submit("seq_write_bandwidth_kbps", 120.5, 500);
  ASSERT_EQ(stub.sent.size(), 3u);
  auto first = json::parse(stub.sent[0].body);
  EXPECT_EQ(first.at("offset_ms"), 500);
  for (const auto& r : stub.sent) EXPECT_EQ(r.body, stub.sent[0].body);
  c.submit_csv("metric,value\ncpu_model,x\n", "b-1");
  EXPECT_EQ(stub.sent.back().headers.at("X-Batch-Id"), "b-1");
  EXPECT_EQ(stub.sent.back().content_type, "text/csv");
}

TEST_F(AgentTest, FlushSpoolRedeliversWithAuth) {
  stub.down = true;
  auto c = client(RetryPolicy{1});
  EXPECT_THROW(c.notify(Ev::FinishedRunning), Error);
  EXPECT_THROW(c.submit_csv("metric,value\n", "b-2"), Error);
  EXPECT_EQ(spool_files().size(), 2u);
  EXPECT_EQ(c.flush_spool(), 0u);
  EXPECT_EQ(spool_files().size(), 2u);
  stub.down = false;
  stub.sent.clear();
  EXPECT_EQ(c.flush_spool(), 2u);
  EXPECT_TRUE(spool_files().empty());
  ASSERT_EQ(stub.sent.size(), 2u);
  EXPECT_EQ(stub.sent[0].path, "/agent/executions/exec-7/state");
  EXPECT_EQ(stub.sent[1].headers.at("X-Batch-Id"), "b-2");
  for (const auto& r : stub.sent) EXPECT_EQ(r.headers.at("Authorization"), "Bearer s3cr3t-token-value");
}

TEST_F(AgentTest, RunnerOutcomeSelectsEvent) {
  script("runner", "exit 0\n");
  auto c = client();
  EXPECT_EQ(run_callback(c, root, [](const std::string&) {}), 0);
  script("runner", "exit 3\n");
  EXPECT_EQ(run_callback(c, root, [](const std::string&) {}), 1);
  EXPECT_EQ(events_sent(), (std::vector<std::string>{"FINISHED_RUNNING", "FAILED_ON_RUNNING"}));
}

TEST_F(AgentTest, RunnerSeesRoot) {
  script("runner", "touch \"$CWB_ROOT/cwb/ran\"\n");
  auto c = client();
  EXPECT_EQ(run_callback(c, root, [](const std::string&) {}), 0);
  EXPECT_TRUE(fs::exists(root / "cwb" / "ran"));
}

TEST_F(AgentTest, PostprocessSubmitsResultsThenReports) {
  script("postprocess",
         "printf 'metric,value,offset_ms\\nseq_write_bandwidth_kbps,10,500\\n' > \"$CWB_ROOT/cwb/results.csv\"\n");
  auto c = client();
  EXPECT_EQ(postprocess(c, root, [](const std::string&) {}), 0);
  ASSERT_EQ(stub.sent.size(), 2u);
  EXPECT_EQ(stub.sent[0].path, "/agent/executions/exec-7/metrics/csv");
  EXPECT_EQ(stub.sent[0].body, "metric,value,offset_ms\nseq_write_bandwidth_kbps,10,500\n");
  EXPECT_EQ(stub.sent[0].headers.at("X-Batch-Id"), "exec-7-driver-results");
  EXPECT_EQ(events_sent(), (std::vector<std::string>{"FINISHED_POSTPROCESSING"}));
}

TEST_F(AgentTest, RejectedResultsFailPostprocessing) {
  script("results.csv", "metric,value\nlatency,3\n");
  stub.script.push_back({false, {422, R"({"error":{"code":"UnknownMetric","detail":"latency"}})"}});
  std::vector<std::string> log;
  auto c = client();
  EXPECT_EQ(postprocess(c, root, [&](const std::string& l) { log.push_back(l); }), 1);
  EXPECT_EQ(events_sent(), (std::vector<std::string>{"FAILED_ON_POSTPROCESSING"}));
  bool surfaced = false;
  for (const auto& l : log) surfaced |= l.find("UnknownMetric") != std::string::npos;
  EXPECT_TRUE(surfaced);
}

TEST_F(AgentTest, FailingPostprocessScriptReportsFailure) {
  script("postprocess", "exit 1\n");
  auto c = client();
  EXPECT_EQ(postprocess(c, root, [](const std::string&) {}), 1);
  EXPECT_EQ(events_sent(), (std::vector<std::string>{"FAILED_ON_POSTPROCESSING"}));
}

// Whatever the agent sends, starting from the state in which the server
// invokes it, must replay legally through the state machine.
TEST_F(AgentTest, SentEventsReplayLegally) {
  for (int run_code : {0, 1}) {
    for (int post_code : {0, 1}) {
      stub.sent.clear();
      script("runner", "exit " + std::to_string(run_code) + "\n");
      script("postprocess", "exit " + std::to_string(post_code) + "\n");
      auto c = client();
      run_callback(c, root, [](const std::string&) {});
      auto state = fsm::ExecutionState::Running;
      for (const auto& name : events_sent()) {
        auto next = fsm::try_apply(state, *fsm::parse_event(name), false);
        ASSERT_TRUE(next) << name;
        state = *next;
      }
      if (state != fsm::ExecutionState::WaitingForStartPostprocessing) continue;
      stub.sent.clear();
      state = fsm::apply_event(state, Ev::StartedPostprocessing, false);
      postprocess(c, root, [](const std::string&) {});
      for (const auto& name : events_sent()) {
        auto next = fsm::try_apply(state, *fsm::parse_event(name), false);
        ASSERT_TRUE(next) << name;
        state = *next;
      }
    }
  }
}

TEST(AgentConfigTest, ParsesAndRejects) {
  auto c = parse_config(provisioning::to_json(config()));
  EXPECT_EQ(c.execution_id, "exec-7");
  EXPECT_EQ(c.server, "http://127.0.0.1:1");
  try {
    parse_config(json{{"server", "x"}, {"execution_id", "e"}, {"role", "r"}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::BadConfig);
    EXPECT_NE(e.detail().find("token"), std::string::npos);
  }
}

}  // namespace
}  // namespace cwb::agent
