#pragma once

// Command-line front end. Exit codes: 0 success, 2 usage or configuration
// error, 3 data error, 4 numerical failure.

#include <iosfwd>
#include <string>
#include <vector>

namespace gfagru::cli {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

/// args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace gfagru::cli
