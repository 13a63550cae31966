#pragma once

#include <iosfwd>

namespace xdepict {

// Entry point of the `xdepict` tool: gen-data, train-cls, train-emb, eval,
// index, query and serve. Returns the process exit status.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace xdepict
