#include "cwb/definition.hpp"

#include <map>
#include <regex>

namespace cwb::model {

std::string_view to_string(ScaleType s) {
  switch (s) {
    case ScaleType::Nominal: return "nominal";
    case ScaleType::Ordinal: return "ordinal";
    case ScaleType::Interval: return "interval";
    case ScaleType::Ratio: return "ratio";
  }
  return "ratio";
}

std::optional<ScaleType> parse_scale(std::string_view s) {
  if (s == "nominal") return ScaleType::Nominal;
  if (s == "ordinal") return ScaleType::Ordinal;
  if (s == "interval") return ScaleType::Interval;
  if (s == "ratio") return ScaleType::Ratio;
  return std::nullopt;
}

std::optional<RecipeRef> RecipeRef::parse(std::string_view text) {
  static const std::regex kPattern(
      R"(^([A-Za-z0-9][A-Za-z0-9_.\-]*)@((0|[1-9][0-9]*)\.(0|[1-9][0-9]*)\.(0|[1-9][0-9]*)(-[0-9A-Za-z.\-]+)?(\+[0-9A-Za-z.\-]+)?)$)");
  std::match_results<std::string_view::const_iterator> m;
  if (!std::regex_match(text.begin(), text.end(), m, kPattern)) return std::nullopt;
  return RecipeRef{m[1].str(), m[2].str()};
}

const MetricDefinition* BenchmarkDefinition::find_metric(std::string_view metric) const {
  for (const auto& m : metrics)
    if (m.name == metric) return &m;
  return nullptr;
}

const VmSpec* BenchmarkDefinition::find_vm(std::string_view role) const {
  for (const auto& v : vms)
    if (v.role == role) return &v;
  return nullptr;
}

ValidationError::ValidationError(std::vector<Violation> violations)
    : Error(violations.empty() ? Errc::MissingField : violations.front().code,
            [&] {
              std::string msg;
              for (const auto& v : violations) {
                if (!msg.empty()) msg += "; ";
                msg += std::string(errc_name(v.code)) + "(" + v.detail + ")";
              }
              return msg;
            }()),
      violations_(std::move(violations)) {}

bool ValidationError::has(Errc code) const {
  for (const auto& v : violations_)
    if (v.code == code) return true;
  return false;
}

namespace {

class Checker {
 public:
  void add(Errc code, std::string detail) { out_.push_back({code, std::move(detail)}); }
  bool ok() const { return out_.empty(); }
  std::vector<Violation> take() { return std::move(out_); }

  std::string string_field(const Json& obj, const char* key, const std::string& where,
                           bool required = true) {
    auto it = obj.find(key);
    if (it == obj.end() || it->is_null()) {
      if (required) add(Errc::MissingField, where + key);
      return {};
    }
    if (!it->is_string()) {
      add(Errc::MissingField, where + key + " must be a string");
      return {};
    }
    return it->get<std::string>();
  }

  // Nested object, non-empty keys, scalar leaves.
  void attributes(const Json& j, const std::string& where) {
    if (!j.is_object()) {
      add(Errc::BadAttributes, where + " must be an object");
      return;
    }
    for (const auto& [k, v] : j.items()) {
      if (k.empty()) add(Errc::BadAttributes, where + " has an empty key");
      if (v.is_object()) {
        attributes(v, where + "." + k);
      } else if (!(v.is_string() || v.is_number() || v.is_boolean())) {
        add(Errc::BadAttributes, where + "." + k + " must be a string, number or boolean");
      }
    }
  }

 private:
  std::vector<Violation> out_;
};

Minutes minutes_field(Checker& c, const Json& doc, const char* key, Minutes fallback,
                      bool allow_zero) {
  auto it = doc.find(key);
  if (it == doc.end() || it->is_null()) return fallback;
  if (!it->is_number_integer()) {
    c.add(Errc::MissingField, std::string(key) + " must be an integer");
    return fallback;
  }
  auto v = it->get<long long>();
  if (v < 0 || (v == 0 && !allow_zero)) {
    c.add(Errc::MissingField, std::string(key) + (allow_zero ? " must be >= 0" : " must be > 0"));
    return fallback;
  }
  return Minutes{v};
}

const Json* array_field(Checker& c, const Json& doc, const char* key) {
  auto it = doc.find(key);
  if (it == doc.end() || !it->is_array()) {
    c.add(Errc::MissingField, std::string(key));
    return nullptr;
  }
  if (it->empty()) {
    c.add(Errc::MissingField, std::string(key) + " non-empty");
    return nullptr;
  }
  return &*it;
}

}  // namespace

BenchmarkDefinition validate_definition(const Json& doc,
                                        const std::set<std::string>& providers,
                                        const DefinitionDefaults& defaults) {
  Checker c;
  BenchmarkDefinition def;
  if (!doc.is_object()) throw ValidationError({{Errc::MissingField, "document must be an object"}});

  def.name = c.string_field(doc, "name", "");
  if (doc.contains("name") && doc["name"].is_string() && def.name.empty())
    c.add(Errc::MissingField, "name non-empty");
  def.timeout = minutes_field(c, doc, "timeout_minutes", defaults.timeout, false);
  def.release_grace =
      minutes_field(c, doc, "release_grace_minutes", defaults.release_grace, true);

  if (auto it = doc.find("schedule"); it != doc.end() && !it->is_null()) {
    if (!it->is_string()) {
      c.add(Errc::BadSchedule, "schedule must be a string");
    } else {
      try {
        def.schedule = sched::CronExpression::parse(it->get<std::string>());
      } catch (const Error& e) {
        c.add(Errc::BadSchedule, e.what());
      }
    }
  }

  std::set<std::string> roles;
  if (const auto* vms = array_field(c, doc, "vms")) {
    for (std::size_t i = 0; i < vms->size(); ++i) {
      const auto& v = (*vms)[i];
      auto where = "vms[" + std::to_string(i) + "].";
      if (!v.is_object()) {
        c.add(Errc::MissingField, where + " must be an object");
        continue;
      }
      VmSpec spec;
      spec.role = c.string_field(v, "role", where);
      spec.provider = c.string_field(v, "provider", where);
      spec.region = c.string_field(v, "region", where, false);
      spec.instance_type = c.string_field(v, "instance_type", where, false);
      spec.image = c.string_field(v, "image", where, false);
      if (auto er = v.find("extra_resources"); er != v.end() && !er->is_null()) {
        if (!er->is_object()) {
          c.add(Errc::BadAttributes, where + "extra_resources must be an object");
        } else {
          for (const auto& [k, val] : er->items())
            if (k.empty() || val.is_object() || val.is_array() || val.is_null())
              c.add(Errc::BadAttributes, where + "extra_resources." + k + " must be a scalar");
          spec.extra_resources = *er;
        }
      }
      if (v.contains("role") && spec.role.empty()) c.add(Errc::MissingField, where + "role non-empty");
      if (!spec.role.empty() && !roles.insert(spec.role).second)
        c.add(Errc::DuplicateRole, spec.role);
      if (!spec.provider.empty() && !providers.contains(spec.provider))
        c.add(Errc::UnknownProvider, spec.provider);
      def.vms.push_back(std::move(spec));
    }
  }

  if (const auto* prov = array_field(c, doc, "provisioning")) {
    for (std::size_t i = 0; i < prov->size(); ++i) {
      const auto& p = (*prov)[i];
      auto where = "provisioning[" + std::to_string(i) + "].";
      if (!p.is_object()) {
        c.add(Errc::MissingField, where + " must be an object");
        continue;
      }
      ProvisioningBinding b;
      b.role = c.string_field(p, "role", where);
      auto recipe = c.string_field(p, "recipe", where);
      if (!recipe.empty()) {
        if (auto ref = RecipeRef::parse(recipe)) {
          b.recipe = *ref;
        } else {
          c.add(Errc::BadRecipeRef, recipe);
        }
      }
      if (auto a = p.find("attributes"); a != p.end() && !a->is_null()) {
        c.attributes(*a, where + "attributes");
        b.attributes = *a;
      }
      if (!b.role.empty() && !roles.contains(b.role))
        c.add(Errc::DanglingRoleReference, b.role);
      def.provisioning.push_back(std::move(b));
    }
  }

  if (const auto* metrics = array_field(c, doc, "metrics")) {
    std::set<std::string> names;
    for (std::size_t i = 0; i < metrics->size(); ++i) {
      const auto& m = (*metrics)[i];
      auto where = "metrics[" + std::to_string(i) + "].";
      if (!m.is_object()) {
        c.add(Errc::MissingField, where + " must be an object");
        continue;
      }
      MetricDefinition md;
      md.name = c.string_field(m, "name", where);
      auto scale = c.string_field(m, "scale", where);
      if (!scale.empty()) {
        if (auto s = parse_scale(scale)) {
          md.scale = *s;
        } else {
          c.add(Errc::BadScale, where + "scale " + scale);
        }
      }
      if (auto u = m.find("unit"); u != m.end() && !u->is_null()) {
        if (u->is_string()) {
          md.unit = u->get<std::string>();
        } else {
          c.add(Errc::MissingField, where + "unit must be a string");
        }
      }
      if (!md.name.empty() && !names.insert(md.name).second)
        c.add(Errc::DuplicateMetricName, md.name);
      def.metrics.push_back(std::move(md));
    }
  }

  if (!c.ok()) throw ValidationError(c.take());
  return def;
}

Json to_document(const BenchmarkDefinition& def) {
  Json doc = Json::object();
  doc["name"] = def.name;
  doc["timeout_minutes"] = def.timeout.count();
  doc["release_grace_minutes"] = def.release_grace.count();
  doc["schedule"] = def.schedule ? Json(def.schedule->text()) : Json(nullptr);
  auto& vms = doc["vms"] = Json::array();
  for (const auto& v : def.vms)
    vms.push_back({{"role", v.role},
                   {"provider", v.provider},
                   {"region", v.region},
                   {"instance_type", v.instance_type},
                   {"image", v.image},
                   {"extra_resources", v.extra_resources}});
  auto& prov = doc["provisioning"] = Json::array();
  for (const auto& b : def.provisioning)
    prov.push_back({{"role", b.role}, {"recipe", b.recipe.str()}, {"attributes", b.attributes}});
  auto& metrics = doc["metrics"] = Json::array();
  for (const auto& m : def.metrics)
    metrics.push_back({{"name", m.name},
                       {"scale", to_string(m.scale)},
                       {"unit", m.unit ? Json(*m.unit) : Json(nullptr)}});
  return doc;
}

Json to_json(const BenchmarkDefinition& def) {
  auto j = to_document(def);
  j["id"] = def.id;
  j["active"] = def.active;
  return j;
}

BenchmarkDefinition from_json(const Json& j, const std::set<std::string>& providers) {
  auto doc = j;
  doc.erase("id");
  doc.erase("active");
  auto def = validate_definition(doc, providers);
  def.id = j.value("id", "");
  def.active = j.value("active", true);
  return def;
}

namespace {

// Fields the document schema declares at each level. An empty set marks a
// free-form map (attributes, extra_resources) that accepts any key below it.
const std::map<std::string, std::set<std::string>>& declared_fields() {
  static const std::map<std::string, std::set<std::string>> kFields = {
      {"", {"name", "timeout_minutes", "release_grace_minutes", "schedule", "vms",
            "provisioning", "metrics"}},
      {"vms", {"role", "provider", "region", "instance_type", "image", "extra_resources"}},
      {"provisioning", {"role", "recipe", "attributes"}},
      {"metrics", {"name", "scale", "unit"}},
  };
  return kFields;
}

void check_override_path(const Json& doc, const std::string& pointer) {
  auto bad = [&](const std::string& why) {
    throw Error(Errc::InvalidOverridePath, pointer + ": " + why);
  };
  Json::json_pointer ptr;
  try {
    ptr = Json::json_pointer(pointer);
  } catch (const Json::exception&) {
    bad("not a JSON pointer");
  }
  std::vector<std::string> tokens;
  for (auto p = ptr; !p.empty(); p = p.parent_pointer()) tokens.insert(tokens.begin(), p.back());
  if (tokens.empty()) bad("empty path");

  const auto& fields = declared_fields();
  const auto& top = tokens[0];
  if (!fields.at("").contains(top)) bad("undeclared field " + top);
  if (top != "vms" && top != "provisioning" && top != "metrics") {
    if (tokens.size() != 1) bad("scalar field has no children");
    return;
  }
  if (tokens.size() < 3) bad("must address a field of one " + top + " entry");
  const auto& list = doc.at(top);
  std::size_t index = 0;
  try {
    std::size_t used = 0;
    index = std::stoul(tokens[1], &used);
    if (used != tokens[1].size()) bad("bad index");
  } catch (const std::logic_error&) {
    bad("bad index");
  }
  if (index >= list.size()) bad("index out of range");
  const auto& field = tokens[2];
  if (!fields.at(top).contains(field)) bad("undeclared field " + field);
  bool free_map = field == "attributes" || field == "extra_resources";
  if (!free_map && tokens.size() != 3) bad("scalar field has no children");
}

}  // namespace

BenchmarkDefinition clone_with_overrides(const BenchmarkDefinition& base,
                                         const Json& overrides, std::string new_id,
                                         const std::set<std::string>& providers) {
  if (!overrides.is_null() && !overrides.is_object())
    throw Error(Errc::InvalidOverridePath, "overrides must map JSON pointers to values");
  auto doc = to_document(base);
  bool renamed = false;
  if (overrides.is_object()) {
    for (const auto& [pointer, value] : overrides.items()) {
      check_override_path(doc, pointer);
      doc[Json::json_pointer(pointer)] = value;
      if (pointer == "/name") renamed = true;
    }
  }
  if (!renamed) doc["name"] = base.name + " (copy)";
  if (doc["name"] == base.name)
    throw Error(Errc::InvalidOverridePath, "/name: clone name must differ from the base");

  auto def = validate_definition(doc, providers,
                                 DefinitionDefaults{base.timeout, base.release_grace});
  def.id = std::move(new_id);
  def.active = base.active;
  return def;
}

}  // namespace cwb::model
