#pragma once

namespace crackseg {

// Command-line driver behind the crackseg binary: train, evaluate, infer,
// report and validate-data. Returns the process exit status: 0 on success,
// 1 on bad input (usage, config, data validation), 2 on runtime failure.
int run_cli(int argc, const char* const* argv);

}  // namespace crackseg
