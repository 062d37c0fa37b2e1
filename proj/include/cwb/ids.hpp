#pragma once

#include <atomic>
#include <cstdint>
#include <string>

#include "cwb/clock.hpp"

namespace cwb {

// Produces "<prefix>-<10 digit epoch seconds>-<6 digit sequence>". Ids from one
// generator sort lexicographically in creation order.
class IdGenerator {
 public:
  IdGenerator(std::string prefix, const Clock& clock, std::uint64_t first = 1)
      : prefix_(std::move(prefix)), clock_(clock), next_(first) {}

  std::string next();

 private:
  std::string prefix_;
  const Clock& clock_;
  std::atomic<std::uint64_t> next_;
};

// Random hex token for bearer authentication.
std::string random_token(std::size_t bytes = 16);

}  // namespace cwb
