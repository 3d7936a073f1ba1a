#pragma once

#include <string>
#include <vector>

namespace pf::cli {

// Exit codes: 0 success, 1 usage, 2 data error, 3 algorithm failure.
int run(const std::vector<std::string>& args);

}  // namespace pf::cli
