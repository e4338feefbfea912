#pragma once

#include <iosfwd>

namespace nmt::cli {

// Entry point of the `nmt` tool. Returns the process exit code: 0 on
// success, 1 on a runtime failure, 2 on a usage error.
int run(int argc, const char *const *argv, std::ostream &out, std::ostream &err);

}  // namespace nmt::cli
