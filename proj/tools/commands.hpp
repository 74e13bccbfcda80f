#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace methylgraph::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitNumeric = 3;
inline constexpr int kExitIo = 4;

/// Runs one command line given without the program name, e.g. {"train", "--graphs", "g"}.
/// Results go to `out`, diagnostics and the resolved configuration to `err`.
/// Returns the process exit status.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace methylgraph::cli
