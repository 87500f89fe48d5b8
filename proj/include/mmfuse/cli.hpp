#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mmfuse {

enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,
  kExitFormat = 2,  // malformed files, bad configuration, shape mismatch
  kExitCheck = 3,   // failed gradient check or diverged training
};

// args excludes the program name.
int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mmfuse
