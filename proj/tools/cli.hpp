#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace poirot::cli {

/// Process exit codes.
enum Exit : int {
  kOk = 0,
  kFlagged = 1,
  kCtViolation = 2,
  kSolverFailure = 3,
  kOracleCap = 4,
  kNoWitness = 5,
  kUsage = 64,
  kInput = 65,
};

/// Runs one command line (without the program name) and returns its exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int main(int argc, char** argv);

}  // namespace poirot::cli
