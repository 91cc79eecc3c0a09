#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace nanoflow::cli {

enum ExitCode : int {
    kSuccess = 0,
    kValidationError = 1,
    kIncompatibleInput = 2,
};

/// Entry point shared by the executable and the tests. `args` excludes the
/// program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace nanoflow::cli
