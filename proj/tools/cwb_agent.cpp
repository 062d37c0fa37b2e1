// cwb-agent: runs the benchmark callback on a resource and reports to the
// server. Reads $CWB_ROOT/cwb/config (CWB_ROOT defaults to /).
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "cwb/agent.hpp"

namespace fs = std::filesystem;

int main(int argc, char** argv) {
  CLI::App app{"cwb-agent"};
  app.require_subcommand(1);

  const char* env_root = std::getenv("CWB_ROOT");
  std::string root = env_root && *env_root ? env_root : "/";
  std::string config_path;
  int attempts = 5;
  app.add_option("--root", root, "Resource root containing cwb/");
  app.add_option("--config", config_path, "Agent configuration (default <root>/cwb/config)");
  app.add_option("--attempts", attempts, "Delivery attempts before spooling")->check(CLI::PositiveNumber);

  auto* run = app.add_subcommand("run", "Run the benchmark callback and report the outcome");
  auto* post = app.add_subcommand("postprocess", "Run postprocessing and submit results.csv");
  auto* notify = app.add_subcommand("notify", "Report a state event");
  std::string event_name;
  notify->add_option("event", event_name)->required();
  auto* submit = app.add_subcommand("submit", "Submit one metric value");
  std::string metric, value;
  std::optional<std::int64_t> offset;
  submit->add_option("metric", metric)->required();
  submit->add_option("value", value)->required();
  submit->add_option("--offset-ms", offset);
  auto* submit_csv = app.add_subcommand("submit-csv", "Submit a CSV batch");
  std::string csv_path, batch_id;
  submit_csv->add_option("path", csv_path)->required()->check(CLI::ExistingFile);
  submit_csv->add_option("--batch-id", batch_id);
  auto* flush = app.add_subcommand("flush-spool", "Re-send spooled requests");

  CLI11_PARSE(app, argc, argv);

  auto log = [](const std::string& line) { std::cerr << "cwb-agent: " << line << std::endl; };
  try {
    fs::path base = root;
    auto cfg = cwb::agent::load_config(config_path.empty() ? base / "cwb" / "config" : fs::path(config_path));
    cwb::agent::HttpTransport transport(cfg.server);
    cwb::agent::RetryPolicy policy;
    policy.attempts = attempts;
    cwb::agent::Client client(cfg, transport, base / "cwb" / "spool", policy, {}, log);

    if (*run) return cwb::agent::run_callback(client, base, log);
    if (*post) return cwb::agent::postprocess(client, base, log);
    if (*notify) {
      auto ev = cwb::fsm::parse_event(event_name);
      if (!ev) throw cwb::Error(cwb::Errc::BadRequest, "unknown event " + event_name);
      auto ack = client.notify(*ev);
      std::cout << ack.displayed_status << (ack.duplicate ? " (duplicate)" : "") << "\n";
      return 0;
    }
    if (*submit) {
      auto parsed = nlohmann::json::parse(value, nullptr, false);
      auto v = parsed.is_number() ? parsed : nlohmann::json(value);
      client.submit(metric, v, offset);
      return 0;
    }
    if (*submit_csv) {
      std::ifstream in(csv_path, std::ios::binary);
      std::stringstream buf;
      buf << in.rdbuf();
      if (batch_id.empty()) batch_id = cfg.execution_id + "-" + fs::path(csv_path).filename().string();
      auto ack = client.submit_csv(buf.str(), batch_id);
      std::cout << ack.count << (ack.duplicate ? " (duplicate)" : "") << "\n";
      return 0;
    }
    if (*flush) {
      std::cout << client.flush_spool() << "\n";
      return 0;
    }
  } catch (const cwb::Error& e) {
    std::cerr << nlohmann::json{{"error", {{"code", cwb::errc_name(e.code())}, {"detail", e.detail()}}}}.dump()
              << std::endl;
    return e.code() == cwb::Errc::Transport ? 3 : 2;
  }
  return 1;
}
