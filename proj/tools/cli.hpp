#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace gmmd::cli {

/// Runs `gmmd <args...>`. Returns 0 on success, 2 for usage errors (unknown
/// flag, missing file, bad spec) and 1 for runtime failures.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace gmmd::cli
