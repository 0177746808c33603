#pragma once

#include <iosfwd>

namespace icar::gateway {

/// Entry point of the `icar` tool. Returns 0 on success, 2 on a usage error
/// and 1 on a runtime failure.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace icar::gateway
