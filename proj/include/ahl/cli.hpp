#pragma once

// Command-line front end: gen-data, train, evaluate, plot, compare.
//
// Exit codes: 0 success, 1 validation or configuration error, 2 runtime or
// numerical error, 3 I/O or file-format error.

#include <iosfwd>
#include <string>
#include <vector>

namespace ahl {

int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err);
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ahl
