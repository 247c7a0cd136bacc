#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace harmony::cli {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kUsage = 2,
  kMissingInput = 3,
  kCheckpointIncompatible = 4,
  kDataError = 5,
};

/// args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace harmony::cli
