#pragma once

#include <ostream>

namespace stormdiff::cli {

/// Runs one stormdiff command line. Returns 0 on success, 2 on a usage error
/// and 1 when the command itself fails.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace stormdiff::cli
