#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mta::cli {

enum ExitCode : int { kOk = 0, kCheckFailed = 1, kConfigError = 2, kIoError = 3 };

/// Runs one `mta` invocation; `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mta::cli
