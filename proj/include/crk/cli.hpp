#pragma once

#include <string>
#include <vector>

namespace crk {

/// Exit codes: 0 success, 1 usage error, 2 data or IO error, 3 numerical failure.
int cli_main(int argc, char** argv);

/// Same, with args[0] as the program name.
int cli_main(const std::vector<std::string>& args);

}  // namespace crk
