#pragma once

#include <optional>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

namespace cwb {

enum class ResourceKind { Vm, BlockStorage, Address };
enum class ResourceStatus { Requested, Ready, Released };

std::string_view to_string(ResourceKind k);
std::string_view to_string(ResourceStatus s);
std::optional<ResourceKind> parse_resource_kind(std::string_view s);
std::optional<ResourceStatus> parse_resource_status(std::string_view s);

/// A live resource acquired from a provider on behalf of one execution.
struct ResourceHandle {
  std::string id;
  std::string provider;
  std::string role;
  ResourceKind kind = ResourceKind::Vm;
  ResourceStatus status = ResourceStatus::Requested;
  std::string endpoint;  // driver-specific connection descriptor
  std::string owner;     // owning execution id

  bool operator==(const ResourceHandle&) const = default;
};

void to_json(nlohmann::json& j, const ResourceHandle& h);
void from_json(const nlohmann::json& j, ResourceHandle& h);

}  // namespace cwb
