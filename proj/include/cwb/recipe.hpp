#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <shared_mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cwb/attributes.hpp"
#include "cwb/definition.hpp"

namespace cwb::provisioning {

enum class StepKind { InstallPackage, WriteFile, RenderRunner, Shell };

std::string_view to_string(StepKind k);

/// One idempotent provisioning step. Which fields apply depends on `kind`:
///   install_package: package
///   write_file:      path, content (template), executable
///   render_runner:   run (template), postprocess (template)
///   shell:           command, guard (exit 0 means already satisfied)
struct Step {
  StepKind kind = StepKind::Shell;
  std::string package;
  std::string path;
  std::string content;
  bool executable = false;
  std::string run;
  std::string postprocess;
  std::string command;
  std::string guard;
};

struct Recipe {
  std::string name;
  std::string version;
  AttributeMap default_attributes = nlohmann::json::object();
  std::vector<Step> steps;

  model::RecipeRef ref() const { return {name, version}; }
};

/// Throws Error(BadRecipe).
Recipe parse_recipe(const nlohmann::json& doc);
nlohmann::json to_json(const Recipe& r);

/// Versioned recipe store; exact name@version lookup only.
class RecipeRegistry {
 public:
  /// Throws DuplicateRecipe unless `replace` is set.
  void add(Recipe recipe, bool replace = false);
  /// Throws RecipeNotFound.
  std::shared_ptr<const Recipe> get(const model::RecipeRef& ref) const;
  bool contains(const model::RecipeRef& ref) const;
  std::vector<model::RecipeRef> list() const;

  /// Loads every *.json file in `dir`; returns the number loaded.
  std::size_t load_directory(const std::filesystem::path& dir);

 private:
  mutable std::shared_mutex mu_;
  std::map<model::RecipeRef, std::shared_ptr<const Recipe>> recipes_;
};

struct ResolvedRecipe {
  std::shared_ptr<const Recipe> recipe;
  AttributeMap attributes;  // recipe defaults overridden by the binding
};

/// Bindings for `role` in document order with merged attributes.
std::vector<ResolvedRecipe> resolve(const model::BenchmarkDefinition& def,
                                    const std::string& role, const RecipeRegistry& registry);

}  // namespace cwb::provisioning
