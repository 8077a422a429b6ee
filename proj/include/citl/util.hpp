#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace citl {

std::string_view trim(std::string_view s);
std::string to_lower(std::string_view s);
bool starts_with_icase(std::string_view s, std::string_view prefix);

/// Strict decimal parse of the whole string (surrounding whitespace allowed).
std::optional<double> parse_number(std::string_view s);

std::string read_file(const std::filesystem::path& path);
std::vector<std::uint8_t> read_binary(const std::filesystem::path& path);

/// Writes via a sibling temp file and rename, creating parent directories.
void write_file(const std::filesystem::path& path, std::string_view content);
void write_binary(const std::filesystem::path& path, std::span<const std::uint8_t> content);

std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text);

}  // namespace citl
