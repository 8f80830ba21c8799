#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace sleepguard::cli {

enum ExitCode : int {
  kOk = 0,
  kInternal = 1,
  kUsage = 2,    // unknown flag, bad flag value, invalid config value
  kData = 3,     // missing or malformed dataset, model or input file
  kNumeric = 4,  // divergence or other non-finite results
  kConfig = 5,   // config file missing or not parseable
};

/// Runs one subcommand. `args` excludes the program name. Errors are
/// reported on `err` as a single line "error[<kind>]: <message>".
int parse_and_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int main(int argc, char** argv);

}  // namespace sleepguard::cli
