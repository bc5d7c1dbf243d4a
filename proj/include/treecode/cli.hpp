#pragma once

#include <iosfwd>

namespace treecode {

// Entry point of the `treecode` tool. Returns 0 on success, 1 on usage
// errors and 2 on data errors.
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace treecode
