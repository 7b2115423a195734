#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace protoens {

/// Entry point of the `protoens` tool. Returns 0 on success, 1 on a
/// validation or runtime failure, 2 on a usage error.
int cli_main(int argc, const char* const* argv);

/// Same, with arguments (excluding the program name) and explicit streams.
int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace protoens
