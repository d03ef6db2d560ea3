#pragma once

// Model package and calibration file formats.
//
// Package layout:
//   "SKRRPKG1"                 8-byte magic
//   u64 little-endian          header length in bytes
//   header                     UTF-8 JSON (format_version, config, seed,
//                              null_tokens, redundancy, tensor directory)
//   zero padding               up to the next multiple of 8
//   blob                       little-endian float32 tensors, row-major,
//                              each starting at an 8-byte aligned offset
//                              relative to the blob start
//
// Calibration: one JSON array of token ids per line, LF-terminated.

#include "skrr/model.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace skrr {

class FormatError : public Error {
public:
    using Error::Error;
};

std::string serialize_package(const ModelPackage& pkg);
ModelPackage deserialize_package(std::string_view bytes);

void save_package(const ModelPackage& pkg, const std::filesystem::path& path);
ModelPackage load_package(const std::filesystem::path& path);

struct CalibrationSet {
    std::vector<std::vector<int>> sequences;

    [[nodiscard]] bool empty() const { return sequences.empty(); }
    [[nodiscard]] std::size_t size() const { return sequences.size(); }
};

/// Seeded random sequences over token ids [1, vocab); the null token is excluded.
CalibrationSet generate_calibration(const EncoderConfig& config, std::uint64_t seed, int count, int min_len = 4,
                                    int max_len = 0);

/// Throws Error if the set or any sequence is empty, a sequence is too long or a token is unknown.
void validate_calibration(const EncoderConfig& config, const CalibrationSet& calib);

CalibrationSet parse_calibration(std::istream& in);
void write_calibration(std::ostream& out, const CalibrationSet& calib);
CalibrationSet load_calibration(const std::filesystem::path& path);
void save_calibration(const CalibrationSet& calib, const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

} // namespace skrr
