#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace gradmimic {

/// Entry point behind the `gradmimic` executable. `args` excludes argv[0].
///
/// Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure
/// (unreadable or malformed input, numerical degeneracy).
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace gradmimic
