#include <gtest/gtest.h>

#include <random>

#include "cwb/definition.hpp"
#include "fixtures.hpp"
#include "json_diff.hpp"

namespace {

using namespace cwb::model;
using cwb::Errc;
using cwb::testing::default_providers;
using cwb::testing::fio_definition_doc;
using cwb::testing::json_diff;

Errc first_violation(const Json& doc) {
  try {
    validate_definition(doc, default_providers());
  } catch (const ValidationError& e) {
    return e.violations().front().code;
  }
  ADD_FAILURE() << "expected violations";
  return Errc::Transport;
}

TEST(ValidateDefinition, EmptyVmsIsMissingField) {
  auto doc = fio_definition_doc();
  doc["vms"] = Json::array();
  doc["provisioning"] = Json::array();  // keep the role check quiet
  doc["provisioning"] = fio_definition_doc()["provisioning"];
  try {
    validate_definition(doc, default_providers());
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_EQ(e.violations().front().code, Errc::MissingField);
    EXPECT_EQ(e.violations().front().detail, "vms non-empty");
  }
}

TEST(ValidateDefinition, CaseStudyIsValid) {
  auto def = validate_definition(fio_definition_doc(), default_providers());
  ASSERT_EQ(def.vms.size(), 1u);
  EXPECT_EQ(def.vms[0].role, "driver");
  EXPECT_EQ(def.provisioning[0].recipe.name, "fio-benchmark");
  EXPECT_EQ(def.provisioning[0].recipe.version, "0.3.0");
  EXPECT_EQ(def.timeout, cwb::Minutes{60});
  EXPECT_EQ(def.find_metric("cpu_model")->scale, ScaleType::Nominal);
  EXPECT_EQ(def.find_metric("seq_write_bandwidth_kbps")->scale, ScaleType::Ratio);
  EXPECT_FALSE(def.schedule);
}

TEST(ValidateDefinition, DanglingRole) {
  auto doc = fio_definition_doc();
  doc["provisioning"][0]["role"] = "db";
  try {
    validate_definition(doc, default_providers());
    FAIL();
  } catch (const ValidationError& e) {
    ASSERT_TRUE(e.has(Errc::DanglingRoleReference));
    EXPECT_EQ(e.violations().front().detail, "db");
  }
}

TEST(ValidateDefinition, OtherViolations) {
  auto doc = fio_definition_doc();
  doc["vms"][0]["provider"] = "ec2";
  EXPECT_EQ(first_violation(doc), Errc::UnknownProvider);

  doc = fio_definition_doc();
  doc["metrics"][1]["name"] = "cpu_model";
  EXPECT_EQ(first_violation(doc), Errc::DuplicateMetricName);

  doc = fio_definition_doc();
  doc["provisioning"][0]["recipe"] = "fio-benchmark";
  EXPECT_EQ(first_violation(doc), Errc::BadRecipeRef);
  doc["provisioning"][0]["recipe"] = "fio-benchmark@0.3";
  EXPECT_EQ(first_violation(doc), Errc::BadRecipeRef);

  doc = fio_definition_doc();
  doc["metrics"][0]["scale"] = "logarithmic";
  EXPECT_EQ(first_violation(doc), Errc::BadScale);

  doc = fio_definition_doc();
  doc["provisioning"][0]["attributes"]["fio"]["list"] = Json::array({1, 2});
  EXPECT_EQ(first_violation(doc), Errc::BadAttributes);

  doc = fio_definition_doc();
  doc["schedule"] = "0 61 * * *";
  EXPECT_EQ(first_violation(doc), Errc::BadSchedule);

  doc = fio_definition_doc();
  doc["timeout_minutes"] = 0;
  EXPECT_EQ(first_violation(doc), Errc::MissingField);

  doc = fio_definition_doc();
  doc["vms"].push_back(doc["vms"][0]);
  EXPECT_EQ(first_violation(doc), Errc::DuplicateRole);
}

TEST(ValidateDefinition, DefaultsWhenTimeoutsAbsent) {
  auto doc = fio_definition_doc();
  doc.erase("timeout_minutes");
  doc.erase("release_grace_minutes");
  auto def = validate_definition(doc, default_providers());
  EXPECT_EQ(def.timeout, cwb::Minutes{360});
  EXPECT_EQ(def.release_grace, cwb::Minutes{30});
}

TEST(ValidateDefinition, ReportsAllViolations) {
  Json doc = {{"name", "x"}, {"vms", Json::array()}, {"provisioning", Json::array()},
              {"metrics", Json::array()}};
  try {
    validate_definition(doc, default_providers());
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_EQ(e.violations().size(), 3u);
  }
}

TEST(CloneWithOverrides, InstanceTypeOnly) {
  auto base = validate_definition(fio_definition_doc(), default_providers());
  base.id = "b-1";
  auto clone = clone_with_overrides(base, {{"/vms/0/instance_type", "m3.medium"}}, "b-2",
                                    default_providers());
  auto diff = json_diff(to_json(base), to_json(clone));
  EXPECT_EQ(diff, (std::set<std::string>{"/id", "/name", "/vms/0/instance_type"}));
  EXPECT_EQ(clone.vms[0].instance_type, "m3.medium");
}

TEST(CloneWithOverrides, EmptyOverridesOnlyRenames) {
  auto base = validate_definition(fio_definition_doc(), default_providers());
  base.id = "b-1";
  auto clone = clone_with_overrides(base, Json::object(), "b-2", default_providers());
  EXPECT_EQ(clone.name, base.name + " (copy)");
  EXPECT_EQ(json_diff(to_json(base), to_json(clone)), (std::set<std::string>{"/id", "/name"}));
}

TEST(CloneWithOverrides, AttributeLeafIsTheOnlyDocumentDifference) {
  auto base = validate_definition(fio_definition_doc(), default_providers());
  auto clone = clone_with_overrides(
      base, {{"/provisioning/0/attributes/fio/config/size", "4g"}, {"/name", "fio 4g"}}, "b-2",
      default_providers());
  auto diff = json_diff(to_document(base), to_document(clone));
  diff.erase("/name");
  EXPECT_EQ(diff.size(), 1u);
  EXPECT_EQ(*diff.begin(), "/provisioning/0/attributes/fio/config/size");
}

TEST(CloneWithOverrides, RejectsUndeclaredPaths) {
  auto base = validate_definition(fio_definition_doc(), default_providers());
  for (const char* path : {"/colour", "/vms/3/instance_type", "/vms/0/colour", "/vms/x/role",
                           "/name/first", "/vms/0"}) {
    try {
      clone_with_overrides(base, {{path, "v"}}, "b-2", default_providers());
      ADD_FAILURE() << path;
    } catch (const cwb::Error& e) {
      EXPECT_EQ(e.code(), Errc::InvalidOverridePath) << path;
    }
  }
  EXPECT_THROW(clone_with_overrides(base, {{"/name", base.name}}, "b-2", default_providers()),
               cwb::Error);
  // Still validated: an override that breaks an invariant is rejected.
  EXPECT_THROW(clone_with_overrides(base, {{"/vms/0/provider", "ec2"}}, "b-2", default_providers()),
               ValidationError);
}

// Generated documents survive validate -> serialize structurally unchanged.
Json random_doc(std::mt19937& rng) {
  auto n = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  auto word = [&](const char* prefix) { return std::string(prefix) + std::to_string(n(0, 999)); };
  std::function<Json(int)> attrs = [&](int depth) {
    Json j = Json::object();
    for (int i = n(0, 3); i > 0; --i) {
      auto key = word("k");
      switch (depth < 3 ? n(0, 3) : n(0, 2)) {
        case 0: j[key] = word("v"); break;
        case 1: j[key] = n(-50, 50); break;
        case 2: j[key] = n(0, 1) == 1; break;
        default: j[key] = attrs(depth + 1); break;
      }
    }
    return j;
  };
  Json doc;
  doc["name"] = word("bench");
  doc["timeout_minutes"] = n(1, 1000);
  doc["release_grace_minutes"] = n(0, 100);
  doc["schedule"] = n(0, 1) ? Json("*/" + std::to_string(n(1, 30)) + " * * * *") : Json(nullptr);
  doc["vms"] = Json::array();
  int roles = n(1, 3);
  for (int i = 0; i < roles; ++i)
    doc["vms"].push_back({{"role", "r" + std::to_string(i)},
                          {"provider", n(0, 1) ? "local" : "simulated"},
                          {"region", word("region")},
                          {"instance_type", word("t")},
                          {"image", word("img")},
                          {"extra_resources", n(0, 1) ? Json{{"ebs_gb", n(1, 100)}} : Json::object()}});
  doc["provisioning"] = Json::array();
  for (int i = n(1, 4); i > 0; --i)
    doc["provisioning"].push_back({{"role", "r" + std::to_string(n(0, roles - 1))},
                                   {"recipe", word("recipe") + "@" + std::to_string(n(0, 9)) + "." +
                                                  std::to_string(n(0, 9)) + "." + std::to_string(n(0, 9))},
                                   {"attributes", attrs(0)}});
  doc["metrics"] = Json::array();
  static const char* kScales[] = {"nominal", "ordinal", "interval", "ratio"};
  for (int i = n(1, 4); i > 0; --i)
    doc["metrics"].push_back({{"name", "m" + std::to_string(i)},
                              {"scale", kScales[n(0, 3)]},
                              {"unit", n(0, 1) ? Json(word("u")) : Json(nullptr)}});
  return doc;
}

TEST(DefinitionProperty, SerializeRoundTrip) {
  std::mt19937 rng(99);
  for (int i = 0; i < 300; ++i) {
    auto doc = random_doc(rng);
    auto def = validate_definition(doc, default_providers());
    auto again = Json::parse(to_document(def).dump());
    EXPECT_TRUE(json_diff(doc, again).empty()) << doc.dump();
  }
}

}  // namespace
