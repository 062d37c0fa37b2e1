#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace cwb::cli {

/// Entry point of the `cwb` command. `args` excludes the program name. Errors
/// go to `err` as a JSON object and yield a non-zero exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cwb::cli
