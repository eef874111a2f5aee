#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace siren::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitRuntime = 3;

// Runs one subcommand. `args` excludes the program name. Artifacts land in a
// fresh run directory under the run root (flag, then SIREN_RUN_ROOT, then
// io.run_root); SIREN_THREADS overrides io.threads.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace siren::cli
