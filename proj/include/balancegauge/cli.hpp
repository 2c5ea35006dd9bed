#pragma once

namespace bg {

// Full command-line front end; returns the process exit code
// (0 success, 2 usage, 3 data/schema error, 4 numerical failure).
int run_cli(int argc, char** argv);

}  // namespace bg
