#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace failure_scout {

/// Entry point behind the `failure_scout` executable. Subcommands: synth,
/// truth, run, bench, serve. Returns the process exit status; usage errors
/// return nonzero after printing help to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace failure_scout
