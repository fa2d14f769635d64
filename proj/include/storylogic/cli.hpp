#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace storylogic {

inline constexpr int kExitOk = 0;
inline constexpr int kExitPartial = 1;
inline constexpr int kExitInvalid = 2;

// `args` excludes the program name. Reports and tables go to `out`, the run
// header, effective configuration and log lines to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace storylogic
