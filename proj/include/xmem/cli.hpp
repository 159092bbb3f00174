#ifndef XMEM_CLI_HPP_
#define XMEM_CLI_HPP_

#include <ostream>

namespace xmem {

// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;  // internal error or failed check
inline constexpr int kExitUsage = 2;    // bad flags, config, or input data

/// Entry point of the `xmem` tool: gen-data, train, eval, gradcheck, ablate.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace xmem

#endif  // XMEM_CLI_HPP_
