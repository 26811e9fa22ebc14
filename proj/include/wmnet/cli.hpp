#pragma once

#include <iostream>

namespace wmnet {

/// Runs the `wmnet` command line. Returns the process exit code: 0 on
/// success, 1 for runtime failures, 2 for usage errors. Failures print one
/// diagnostic line to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout,
            std::ostream& err = std::cerr);

}  // namespace wmnet
