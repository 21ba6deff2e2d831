#pragma once

namespace deltar {

/// Unified command-line surface (simulate / calibrate / train / eval /
/// plane-bench / ablate). Returns 0 on success, 1 on a usage error and 2 on
/// a data error (missing or malformed inputs, failed fits).
int cli_main(int argc, const char* const* argv);

}  // namespace deltar
