#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace nrsfm {

/// Runs one command line (without the program name). Exit codes: 0 success,
/// 1 usage or input error, 2 numerical failure.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int cli_main(int argc, char** argv);

}  // namespace nrsfm
