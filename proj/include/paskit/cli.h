#ifndef PASKIT_CLI_H_
#define PASKIT_CLI_H_

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace paskit {

inline constexpr std::string_view kToolkitVersion = "1.0.0";

// Exit statuses shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

// Entry point of the `paskit` binary. `args` excludes the program name.
// Subcommands: validate, simulate, score, eval, ablate, export-curves.
int RunCli(const std::vector<std::string>& args, std::ostream& out,
           std::ostream& err);

}  // namespace paskit

#endif  // PASKIT_CLI_H_
