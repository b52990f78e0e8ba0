#ifndef DARSA_CLI_HPP
#define DARSA_CLI_HPP

// Experiment runner: subcommands ot, bounds, train, figure1 and gen.
// Exit codes: 0 ok, 2 input error, 3 solver divergence, 4 training failure.

#include <iosfwd>

namespace darsa::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInput = 2;
inline constexpr int kExitSolver = 3;
inline constexpr int kExitTraining = 4;

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace darsa::cli

#endif  // DARSA_CLI_HPP
