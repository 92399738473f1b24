#pragma once

namespace cutfocal {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitData = 3,
  kExitDivergence = 4,
};

/// Output root override: relative output directories resolve under it.
inline constexpr const char* kOutputRootEnv = "CUTFOCAL_OUTPUT_ROOT";

/// Entry point for the train, translate, evaluate and curve subcommands.
int run_cli(int argc, const char* const* argv);

}  // namespace cutfocal
