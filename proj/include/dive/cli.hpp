#pragma once

namespace dive::cli {

/// Entry point of the `dive` tool. Exit codes: 0 success, 1 runtime
/// failure, 2 usage error.
int run(int argc, char** argv);

}  // namespace dive::cli
