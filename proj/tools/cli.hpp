#pragma once

// Command-line pipeline: gen, order, reuse, prune, eval, analyze, oracle, bound.
//
// Every JSON artifact embeds a manifest (subcommand, resolved flags, input
// digests, tool version, seed). Wall time and the thread count go to a
// separate <subcommand>.runtime.json so the other artifacts only depend on
// the manifest.

#include <iosfwd>
#include <string>
#include <vector>

namespace skrr::cli {

inline constexpr const char* kToolVersion = "0.1.0";

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

/// args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Lower-case hex SHA-256 of a byte string.
std::string sha256_hex(const std::string& bytes);

} // namespace skrr::cli
