#include "cwb/ids.hpp"

#include <cstdio>
#include <random>

namespace cwb {

std::string IdGenerator::next() {
  auto seq = next_++;
  char buf[48];
  std::snprintf(buf, sizeof buf, "-%010lld-%06llu",
                static_cast<long long>(clock_.now().time_since_epoch().count()),
                static_cast<unsigned long long>(seq));
  return prefix_ + buf;
}

std::string random_token(std::size_t bytes) {
  static thread_local std::random_device rd;
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(bytes * 2);
  for (std::size_t i = 0; i < bytes; ++i) {
    auto b = static_cast<unsigned>(rd() & 0xffu);
    out.push_back(kHex[b >> 4]);
    out.push_back(kHex[b & 0xf]);
  }
  return out;
}

}  // namespace cwb
