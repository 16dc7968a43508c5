#pragma once

#include <iosfwd>

namespace hetcurve {

/// Entry point of the `hetcurve` command line tool. Results go to `out` (or
/// the --output file), logs and structured errors to `err`. Returns the
/// process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace hetcurve
