#include "cwb/resource.hpp"

namespace cwb {

std::string_view to_string(ResourceKind k) {
  switch (k) {
    case ResourceKind::Vm: return "vm";
    case ResourceKind::BlockStorage: return "block_storage";
    case ResourceKind::Address: return "address";
  }
  return "vm";
}

std::string_view to_string(ResourceStatus s) {
  switch (s) {
    case ResourceStatus::Requested: return "requested";
    case ResourceStatus::Ready: return "ready";
    case ResourceStatus::Released: return "released";
  }
  return "requested";
}

std::optional<ResourceKind> parse_resource_kind(std::string_view s) {
  if (s == "vm") return ResourceKind::Vm;
  if (s == "block_storage") return ResourceKind::BlockStorage;
  if (s == "address") return ResourceKind::Address;
  return std::nullopt;
}

std::optional<ResourceStatus> parse_resource_status(std::string_view s) {
  if (s == "requested") return ResourceStatus::Requested;
  if (s == "ready") return ResourceStatus::Ready;
  if (s == "released") return ResourceStatus::Released;
  return std::nullopt;
}

void to_json(nlohmann::json& j, const ResourceHandle& h) {
  j = nlohmann::json{{"id", h.id},
                     {"provider", h.provider},
                     {"role", h.role},
                     {"kind", to_string(h.kind)},
                     {"status", to_string(h.status)},
                     {"endpoint", h.endpoint},
                     {"owner", h.owner}};
}

void from_json(const nlohmann::json& j, ResourceHandle& h) {
  h.id = j.at("id").get<std::string>();
  h.provider = j.at("provider").get<std::string>();
  h.role = j.at("role").get<std::string>();
  h.kind = parse_resource_kind(j.at("kind").get<std::string>()).value_or(ResourceKind::Vm);
  h.status = parse_resource_status(j.at("status").get<std::string>())
                 .value_or(ResourceStatus::Requested);
  h.endpoint = j.value("endpoint", "");
  h.owner = j.value("owner", "");
}

}  // namespace cwb
