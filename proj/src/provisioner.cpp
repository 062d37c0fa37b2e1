#include "cwb/provisioner.hpp"

namespace cwb::provisioning {

nlohmann::json to_json(const AgentConfig& c) {
  return {{"server", c.server}, {"execution_id", c.execution_id}, {"token", c.token}, {"role", c.role}};
}

std::string_view to_string(StepOutcome o) {
  switch (o) {
    case StepOutcome::Changed: return "changed";
    case StepOutcome::Skipped: return "skipped";
    case StepOutcome::Failed: return "failed";
  }
  return "failed";
}

bool ProvisionReport::ok() const { return count(StepOutcome::Failed) == 0; }

std::size_t ProvisionReport::count(StepOutcome o) const {
  std::size_t n = 0;
  for (const auto& s : steps) n += s.outcome == o;
  return n;
}

nlohmann::json to_json(const ProvisionReport& r) {
  auto steps = nlohmann::json::array();
  for (const auto& s : r.steps)
    steps.push_back({{"recipe", s.recipe},
                     {"index", s.index},
                     {"kind", to_string(s.kind)},
                     {"outcome", to_string(s.outcome)},
                     {"detail", s.detail}});
  return {{"ok", r.ok()}, {"steps", steps}};
}

namespace {

std::string quoted_root(const std::string& path) {
  return "\"$CWB_ROOT" + path + "\"";
}

struct StepResult {
  StepOutcome outcome;
  std::string detail;
};

// Every file-producing step is confirmed on the resource after syncing, so a
// resource that cannot hold state fails the step instead of passing silently.
StepResult sync_and_verify(providers::Driver& driver, const std::string& handle,
                           const std::vector<providers::Payload>& files) {
  auto report = driver.sync(handle, files);
  for (const auto& f : files) {
    auto r = driver.exec(handle, "test -f " + quoted_root(f.path), providers::ExecMode::Blocking);
    if (r.exit_code != 0)
      return {StepOutcome::Failed, f.path + " missing after sync" +
                                       (r.stderr_text.empty() ? "" : ": " + r.stderr_text)};
  }
  if (report.noop()) return {StepOutcome::Skipped, "already present"};
  std::string detail = "wrote";
  for (const auto& p : report.written) detail += " " + p;
  return {StepOutcome::Changed, detail};
}

StepResult run_shell(providers::Driver& driver, const std::string& handle, const Step& step) {
  using providers::ExecMode;
  if (driver.exec(handle, step.guard, ExecMode::Blocking).exit_code == 0)
    return {StepOutcome::Skipped, "guard satisfied"};
  auto r = driver.exec(handle, step.command, ExecMode::Blocking);
  if (r.exit_code != 0)
    return {StepOutcome::Failed, "exit " + std::to_string(r.exit_code) +
                                     (r.stderr_text.empty() ? "" : ": " + r.stderr_text)};
  if (driver.exec(handle, step.guard, ExecMode::Blocking).exit_code != 0)
    return {StepOutcome::Failed, "guard still unsatisfied after command"};
  return {StepOutcome::Changed, "ran command"};
}

StepResult run_step(providers::Driver& driver, const std::string& handle, const Step& step,
                    const AttributeMap& attrs, const AgentConfig& agent) {
  switch (step.kind) {
    case StepKind::InstallPackage:
      // Packages are recorded in a manifest on the resource; real package
      // managers are never invoked.
      return sync_and_verify(driver, handle, {{"/cwb/packages/" + step.package, step.package + "\n", false}});
    case StepKind::WriteFile:
      return sync_and_verify(
          driver, handle,
          {{render_template(step.path, attrs), render_template(step.content, attrs), step.executable}});
    case StepKind::RenderRunner: {
      std::vector<providers::Payload> files{
          {"/cwb/runner", render_template(step.run, attrs), true},
          {"/cwb/config", to_json(agent).dump(2) + "\n", false},
      };
      if (!step.postprocess.empty())
        files.push_back({"/cwb/postprocess", render_template(step.postprocess, attrs), true});
      return sync_and_verify(driver, handle, files);
    }
    case StepKind::Shell:
      return run_shell(driver, handle, {step.kind, "", "", "", false, "", "",
                                        render_template(step.command, attrs),
                                        render_template(step.guard, attrs)});
  }
  return {StepOutcome::Failed, "unknown step"};
}

}  // namespace

ProvisionReport apply(const std::vector<ResolvedRecipe>& recipes, const std::string& handle_id,
                      providers::Driver& driver, const AgentConfig& agent) {
  ProvisionReport report;
  for (const auto& rr : recipes) {
    auto attrs = rr.attributes;
    attrs["cwb"] = {{"execution_id", agent.execution_id}, {"role", agent.role}, {"server", agent.server}};
    const auto name = rr.recipe->ref().str();
    for (std::size_t i = 0; i < rr.recipe->steps.size(); ++i) {
      const auto& step = rr.recipe->steps[i];
      StepResult res;
      try {
        res = run_step(driver, handle_id, step, attrs, agent);
      } catch (const Error& e) {
        if (e.code() != Errc::StepFailed && e.code() != Errc::PayloadTooLarge &&
            e.code() != Errc::BadRequest)
          throw;
        res = {StepOutcome::Failed, e.detail()};
      }
      report.steps.push_back({name, i, step.kind, res.outcome, res.detail});
      if (res.outcome == StepOutcome::Failed)
        throw ProvisionError(name + " step " + std::to_string(i) + " (" +
                                 std::string(to_string(step.kind)) + "): " + res.detail,
                             report);
    }
  }
  return report;
}

}  // namespace cwb::provisioning
