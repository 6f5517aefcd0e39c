#pragma once

#include <iosfwd>
#include <string>

#include "ipdma/config.hpp"

namespace ipdma {

/// Exit codes shared by all commands.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfigError = 1;
inline constexpr int kExitDataError = 2;
inline constexpr int kExitEstimationError = 3;

/// Runs the requested estimators against a single named target study and
/// writes estimates, intervals and weight diagnostics under config.out_dir.
int cmd_transport(const RunConfig& config, std::ostream& log);

/// Leave-one-study-out evaluation; writes the aligned comparison table and
/// the machine-readable cell records. Individual cell failures do not abort
/// the run.
int cmd_loso(const RunConfig& config, std::ostream& log);

/// Weight and overlap diagnostics for one target without estimating effects.
int cmd_diagnose(const RunConfig& config, std::ostream& log);

/// Effect-modifier screening report.
int cmd_screen(const RunConfig& config, std::ostream& log);

/// Argument parsing + dispatch for the command-line tool.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace ipdma
