#include "cwb/recipe.hpp"

#include <fstream>

#include "cwb/error.hpp"

namespace cwb::provisioning {

std::string_view to_string(StepKind k) {
  switch (k) {
    case StepKind::InstallPackage: return "install_package";
    case StepKind::WriteFile: return "write_file";
    case StepKind::RenderRunner: return "render_runner";
    case StepKind::Shell: return "shell";
  }
  return "shell";
}

namespace {

std::string required(const nlohmann::json& j, const char* key, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_string() || it->get<std::string>().empty())
    throw Error(Errc::BadRecipe, where + " requires string field " + key);
  return it->get<std::string>();
}

}  // namespace

Recipe parse_recipe(const nlohmann::json& doc) {
  if (!doc.is_object()) throw Error(Errc::BadRecipe, "recipe must be an object");
  Recipe r;
  r.name = required(doc, "name", "recipe");
  r.version = required(doc, "version", "recipe");
  if (!model::RecipeRef::parse(r.name + "@" + r.version))
    throw Error(Errc::BadRecipe, "invalid name@version " + r.name + "@" + r.version);
  if (auto it = doc.find("default_attributes"); it != doc.end() && !it->is_null()) {
    if (!it->is_object()) throw Error(Errc::BadRecipe, "default_attributes must be an object");
    r.default_attributes = *it;
  }
  auto steps = doc.find("steps");
  if (steps == doc.end() || !steps->is_array() || steps->empty())
    throw Error(Errc::BadRecipe, r.name + ": steps must be a non-empty array");
  for (std::size_t i = 0; i < steps->size(); ++i) {
    const auto& s = (*steps)[i];
    auto where = r.name + " step " + std::to_string(i);
    if (!s.is_object()) throw Error(Errc::BadRecipe, where + " must be an object");
    auto kind = required(s, "kind", where);
    Step step;
    if (kind == "install_package") {
      step.kind = StepKind::InstallPackage;
      step.package = required(s, "package", where);
    } else if (kind == "write_file") {
      step.kind = StepKind::WriteFile;
      step.path = required(s, "path", where);
      step.content = s.value("content", "");
      step.executable = s.value("executable", false);
    } else if (kind == "render_runner") {
      step.kind = StepKind::RenderRunner;
      step.run = required(s, "run", where);
      step.postprocess = s.value("postprocess", "");
    } else if (kind == "shell") {
      step.kind = StepKind::Shell;
      step.command = required(s, "command", where);
      step.guard = required(s, "guard", where);
    } else {
      throw Error(Errc::BadRecipe, where + " has unknown kind " + kind);
    }
    r.steps.push_back(std::move(step));
  }
  return r;
}

nlohmann::json to_json(const Recipe& r) {
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& s : r.steps) {
    nlohmann::json j{{"kind", to_string(s.kind)}};
    switch (s.kind) {
      case StepKind::InstallPackage: j["package"] = s.package; break;
      case StepKind::WriteFile:
        j["path"] = s.path;
        j["content"] = s.content;
        j["executable"] = s.executable;
        break;
      case StepKind::RenderRunner:
        j["run"] = s.run;
        j["postprocess"] = s.postprocess;
        break;
      case StepKind::Shell:
        j["command"] = s.command;
        j["guard"] = s.guard;
        break;
    }
    steps.push_back(std::move(j));
  }
  return {{"name", r.name},
          {"version", r.version},
          {"default_attributes", r.default_attributes},
          {"steps", steps}};
}

void RecipeRegistry::add(Recipe recipe, bool replace) {
  auto ref = recipe.ref();
  std::unique_lock lock(mu_);
  if (!replace && recipes_.contains(ref)) throw Error(Errc::DuplicateRecipe, ref.str());
  recipes_[ref] = std::make_shared<const Recipe>(std::move(recipe));
}

std::shared_ptr<const Recipe> RecipeRegistry::get(const model::RecipeRef& ref) const {
  std::shared_lock lock(mu_);
  auto it = recipes_.find(ref);
  if (it == recipes_.end()) throw Error(Errc::RecipeNotFound, ref.str());
  return it->second;
}

bool RecipeRegistry::contains(const model::RecipeRef& ref) const {
  std::shared_lock lock(mu_);
  return recipes_.contains(ref);
}

std::vector<model::RecipeRef> RecipeRegistry::list() const {
  std::shared_lock lock(mu_);
  std::vector<model::RecipeRef> out;
  for (const auto& [ref, r] : recipes_) out.push_back(ref);
  return out;
}

std::size_t RecipeRegistry::load_directory(const std::filesystem::path& dir) {
  std::size_t n = 0;
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    std::ifstream in(f);
    auto doc = nlohmann::json::parse(in, nullptr, false);
    if (doc.is_discarded()) throw Error(Errc::BadRecipe, f.string() + " is not valid JSON");
    add(parse_recipe(doc), true);
    ++n;
  }
  return n;
}

std::vector<ResolvedRecipe> resolve(const model::BenchmarkDefinition& def,
                                    const std::string& role, const RecipeRegistry& registry) {
  std::vector<ResolvedRecipe> out;
  for (const auto& b : def.provisioning) {
    if (b.role != role) continue;
    auto recipe = registry.get(b.recipe);
    out.push_back({recipe, merge(recipe->default_attributes, b.attributes)});
  }
  return out;
}

}  // namespace cwb::provisioning
