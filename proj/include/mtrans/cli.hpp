#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace mtrans {

/// Command-line front end. `args` excludes the program name. Returns the
/// process exit code: 0 on success, 1 for usage or flag-value errors, 2 for
/// runtime or validation failures (missing or malformed files, aborted
/// training, a failed gradient check).
int cli_main(const std::vector<std::string>& args, std::ostream& out,
             std::ostream& err);

}  // namespace mtrans
