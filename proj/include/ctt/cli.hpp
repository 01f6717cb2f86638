#pragma once

namespace ctt {

// Entry point behind the `cttriage` binary; exposed for in-process testing.
// Exit codes: 0 success, 1 runtime/data error, 2 usage/config error.
int run_cli(int argc, const char* const* argv);

}  // namespace ctt
