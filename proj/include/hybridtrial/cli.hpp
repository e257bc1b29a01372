#pragma once

#include <iosfwd>

namespace hybridtrial {

/// Entry point of the `hybridtrial` tool (subcommands analyze, simulate,
/// diagnose). Returns the process exit code; errors are reported as JSON on
/// `err` and, when the output directory exists, in <out>/error.json.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace hybridtrial
