#pragma once

#include <iosfwd>

namespace align {

/// Entry point of the `align` tool. Exit codes: 0 success, 1 failed checks or
/// unexpected error, 2 configuration/usage error, 3 numeric abort.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace align
