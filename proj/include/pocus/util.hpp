#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace pocus {

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);
std::string base64_encode(std::span<const unsigned char> bytes);
// ValidationError on malformed input.
std::vector<unsigned char> base64_decode(std::string_view text);

// 64-bit FNV-1a; stable across platforms and runs.
std::uint64_t stable_hash(std::string_view bytes);

std::string read_file(const std::filesystem::path& path);
// Writes to a sibling temporary file and renames it over the target.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

// Independent, reproducible 64-bit seed for sub-stream `stream` of `seed`
// (splitmix64 finalizer over the pair).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

// Minimal RFC 4180 reader: quoted fields, doubled quotes, CRLF tolerant.
using CsvRow = std::vector<std::string>;
std::vector<CsvRow> parse_csv(std::string_view text);
std::string csv_escape(std::string_view field);

// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

}  // namespace pocus
