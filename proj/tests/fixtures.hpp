#pragma once

#include <set>
#include <string>

#include <nlohmann/json.hpp>

namespace cwb::testing {

inline const std::set<std::string>& default_providers() {
  static const std::set<std::string> p{"simulated", "local"};
  return p;
}

// Sequential-write case study benchmark: one "driver" VM on m1.small in
// eu-west-1 with 20 GB of extra block storage.
inline nlohmann::json fio_definition_doc(const std::string& provider = "simulated") {
  return nlohmann::json::parse(R"({
    "name": "fio sequential write",
    "timeout_minutes": 60,
    "release_grace_minutes": 30,
    "schedule": null,
    "vms": [{"role": "driver", "provider": ")" + provider + R"(", "region": "eu-west-1",
             "instance_type": "m1.small", "image": "ubuntu-14.04",
             "extra_resources": {"ebs_gb": 20}}],
    "provisioning": [{"role": "driver", "recipe": "fio-benchmark@0.3.0",
                      "attributes": {"fio": {"metric_definition_id": "seq. write",
                                             "config": {"size": "1g", "refill_buffers": "1"}}}}],
    "metrics": [{"name": "cpu_model", "scale": "nominal", "unit": null},
                {"name": "seq_write_bandwidth_kbps", "scale": "ratio", "unit": "KB/s"}]
  })");
}

}  // namespace cwb::testing
