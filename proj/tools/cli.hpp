#pragma once

#include <ostream>

namespace adt {

// Entry point of the `adt` binary; returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace adt
