#pragma once

#include <string>
#include <vector>

#include "cwb/driver.hpp"
#include "cwb/error.hpp"
#include "cwb/recipe.hpp"

namespace cwb::provisioning {

/// Written to /cwb/config by render_runner; read by the agent.
struct AgentConfig {
  std::string server;
  std::string execution_id;
  std::string token;
  std::string role;
};

nlohmann::json to_json(const AgentConfig& c);

enum class StepOutcome { Changed, Skipped, Failed };

std::string_view to_string(StepOutcome o);

struct StepReport {
  std::string recipe;  // name@version
  std::size_t index = 0;
  StepKind kind = StepKind::Shell;
  StepOutcome outcome = StepOutcome::Skipped;
  std::string detail;
};

struct ProvisionReport {
  std::vector<StepReport> steps;

  bool ok() const;
  std::size_t count(StepOutcome o) const;
};

nlohmann::json to_json(const ProvisionReport& r);

/// Error(StepFailed) carrying the report up to and including the failed step.
class ProvisionError : public Error {
 public:
  ProvisionError(std::string detail, ProvisionReport report)
      : Error(Errc::StepFailed, std::move(detail)), report_(std::move(report)) {}
  const ProvisionReport& report() const { return report_; }

 private:
  ProvisionReport report_;
};

/// Converges `handle_id` by running every step of every recipe in order.
/// Aborts at the first failed step with ProvisionError; driver errors such as
/// ConnectionLost propagate unchanged.
ProvisionReport apply(const std::vector<ResolvedRecipe>& recipes, const std::string& handle_id,
                      providers::Driver& driver, const AgentConfig& agent);

}  // namespace cwb::provisioning
