#pragma once

#include <string>
#include <vector>

namespace deltamon::cli {

/// Runs one subcommand. Exit codes: 0 success, 1 usage error, 2 data or
/// validation error.
int dispatch(const std::vector<std::string>& args);

}  // namespace deltamon::cli
