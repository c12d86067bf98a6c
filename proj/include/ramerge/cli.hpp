// SPDX-License-Identifier: Apache-2.0
//
// Subcommand front end: label, merge, calibrate, eval, inspect, gen-toy.
// Every command that writes files writes them into --out together with
// manifest.json (effective configuration) and provenance.json (input and
// output hashes, tool version, timestamp).

#pragma once

#include <cstdint>
#include <ostream>

namespace ramerge {

inline constexpr const char* tool_version = "0.1.0";

// Relative --out paths resolve under this directory when it is set.
inline constexpr const char* output_root_env = "RAMERGE_OUTPUT_ROOT";

// Defaults not owned by a module config struct.
namespace defaults {
inline constexpr std::uint64_t seed = 0;
inline constexpr std::size_t toy_k = 4;
inline constexpr std::size_t toy_calibration_per_task = 64;
inline constexpr std::size_t toy_evaluation_per_task = 50;
}  // namespace defaults

// Returns the process exit status; never throws.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ramerge
