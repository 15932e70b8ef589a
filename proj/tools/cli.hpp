#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace ebd::cli {

// Exit codes: 0 success, 1 downstream failure, 2 usage or configuration error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ebd::cli
