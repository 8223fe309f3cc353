#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace fa::cli {

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

// Subcommands: gen-cipher, train, translate, evaluate, inspect-flow.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace fa::cli
