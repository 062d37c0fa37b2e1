#include "cwb/driver.hpp"

#include "cwb/error.hpp"

namespace cwb::providers {

ResourceHandle Driver::await_ready(const std::string& handle_id, Clock& clock) {
  while (true) {
    if (auto h = poll_ready(handle_id)) return *h;
    auto next = clock.now() + Seconds{1};
    if (auto at = ready_at(handle_id); at && *at > clock.now() && *at < next) next = *at;
    clock.sleep_until(next);
  }
}

void Driver::close_owner(const std::string& owner) {
  std::lock_guard lock(owners_mu_);
  closed_owners_.insert(owner);
}

std::vector<ResourceHandle> Driver::leaked_resources() const {
  auto live = outstanding();
  std::lock_guard lock(owners_mu_);
  std::vector<ResourceHandle> out;
  for (auto& h : live)
    if (closed_owners_.contains(h.owner)) out.push_back(std::move(h));
  return out;
}

void DriverRegistry::add(std::shared_ptr<Driver> driver) {
  auto id = driver->id();
  drivers_[id] = std::move(driver);
}

Driver& DriverRegistry::get(const std::string& id) const {
  auto it = drivers_.find(id);
  if (it == drivers_.end()) throw Error(Errc::ProviderUnavailable, "no driver registered for " + id);
  return *it->second;
}

bool DriverRegistry::contains(const std::string& id) const { return drivers_.contains(id); }

std::set<std::string> DriverRegistry::ids() const {
  std::set<std::string> out;
  for (const auto& [id, d] : drivers_) out.insert(id);
  return out;
}

std::vector<ResourceHandle> DriverRegistry::leaked_resources() const {
  std::vector<ResourceHandle> out;
  for (const auto& [id, d] : drivers_) {
    auto leaked = d->leaked_resources();
    out.insert(out.end(), leaked.begin(), leaked.end());
  }
  return out;
}

}  // namespace cwb::providers
