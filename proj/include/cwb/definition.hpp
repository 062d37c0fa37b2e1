#pragma once

#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "cwb/clock.hpp"
#include "cwb/cron.hpp"
#include "cwb/error.hpp"

namespace cwb::model {

using Json = nlohmann::json;

/// Nested object with string keys and scalar (string/number/boolean) leaves.
using AttributeMap = Json;

enum class ScaleType { Nominal, Ordinal, Interval, Ratio };

std::string_view to_string(ScaleType s);
std::optional<ScaleType> parse_scale(std::string_view s);

struct RecipeRef {
  std::string name;
  std::string version;

  std::string str() const { return name + "@" + version; }
  static std::optional<RecipeRef> parse(std::string_view text);
  bool operator==(const RecipeRef&) const = default;
  auto operator<=>(const RecipeRef&) const = default;
};

struct VmSpec {
  std::string role;
  std::string provider;
  std::string region;
  std::string instance_type;
  std::string image;
  Json extra_resources = Json::object();  // e.g. {"ebs_gb": 20}

  bool operator==(const VmSpec&) const = default;
};

struct ProvisioningBinding {
  std::string role;
  RecipeRef recipe;
  AttributeMap attributes = Json::object();

  bool operator==(const ProvisioningBinding&) const = default;
};

struct MetricDefinition {
  std::string name;
  ScaleType scale = ScaleType::Ratio;
  std::optional<std::string> unit;

  bool operator==(const MetricDefinition&) const = default;
};

struct BenchmarkDefinition {
  std::string id;
  std::string name;
  std::vector<VmSpec> vms;
  std::vector<ProvisioningBinding> provisioning;
  std::vector<MetricDefinition> metrics;
  std::optional<sched::CronExpression> schedule;
  Minutes timeout{360};
  Minutes release_grace{30};
  bool active = true;

  const MetricDefinition* find_metric(std::string_view metric) const;
  const VmSpec* find_vm(std::string_view role) const;
};

struct DefinitionDefaults {
  Minutes timeout{360};
  Minutes release_grace{30};
};

struct Violation {
  Errc code;
  std::string detail;
};

/// Thrown by validate_definition with every violation found, not just the
/// first. code() is the code of the first violation.
class ValidationError : public Error {
 public:
  explicit ValidationError(std::vector<Violation> violations);
  const std::vector<Violation>& violations() const { return violations_; }
  bool has(Errc code) const;

 private:
  std::vector<Violation> violations_;
};

/// Builds a BenchmarkDefinition from a definition document. The returned id is
/// empty; the store assigns one.
BenchmarkDefinition validate_definition(const Json& doc,
                                        const std::set<std::string>& providers,
                                        const DefinitionDefaults& defaults = {});

/// The definition document (schema field names only, no id/active).
Json to_document(const BenchmarkDefinition& def);

/// Document plus "id" and "active"; the API representation.
Json to_json(const BenchmarkDefinition& def);
BenchmarkDefinition from_json(const Json& j, const std::set<std::string>& providers);

/// `overrides` maps JSON pointers into the definition document to new values,
/// e.g. {"/vms/0/instance_type": "m3.medium"}. Every pointer must address a
/// field the schema declares; attribute and extra-resource maps may gain keys.
/// The name gets a " (copy)" suffix unless "/name" is overridden.
BenchmarkDefinition clone_with_overrides(const BenchmarkDefinition& base,
                                         const Json& overrides, std::string new_id,
                                         const std::set<std::string>& providers);

}  // namespace cwb::model
