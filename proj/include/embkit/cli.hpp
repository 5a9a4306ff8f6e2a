#pragma once

#include <iosfwd>
#include <string>
#include <vector>

// Command-line front end: curate, train, eval, synth (and a hidden `serve`
// that exposes a checkpoint over the external-encoder line protocol).
namespace embkit::cli {

inline constexpr const char* kVersion = "0.1.0";

enum ExitCode : int { kOk = 0, kRuntimeError = 1, kUsageError = 2, kPartialFailure = 3 };

// argv[0] is the program name. Never throws; errors map to exit codes.
int run(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace embkit::cli
