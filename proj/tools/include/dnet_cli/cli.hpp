#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace dnet::cli {

/// Runs one `dnet` invocation. Returns the process exit status: 0 on success,
/// 1 on a runtime failure, 2 on a usage error. Diagnostics go to `err` as a
/// single line.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dnet::cli
