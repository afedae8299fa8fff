#pragma once

#include <iosfwd>

namespace dtg::cli {

// Exit codes: 0 success, 1 user error, 2 internal error.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace dtg::cli
