#pragma once

namespace persona {

// Entry point of the `persona` tool. 0 ok, 1 runtime error (ApiError JSON on
// stderr), 2 usage error.
int run_cli(int argc, char** argv);

}  // namespace persona
