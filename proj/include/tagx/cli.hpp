#pragma once

namespace tagx::cli {

/// Parses argv and runs one subcommand. Returns 0 on success, 1 on a pipeline
/// error and 2 on a usage error.
int dispatch(int argc, const char* const* argv);

}  // namespace tagx::cli
