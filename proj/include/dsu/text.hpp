#ifndef DSU_TEXT_HPP
#define DSU_TEXT_HPP

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace dsu {

// utt_id -> text. Ordered so every traversal is deterministic.
using TextTable = std::map<std::string, std::string>;

std::u32string utf8_decode(std::string_view s);
std::string utf8_encode(std::u32string_view s);

// Reads "key<TAB>value" lines. Empty lines are skipped; a line without a tab
// maps its key to an empty value. Duplicate keys are a ValidationError.
TextTable read_tsv(const std::filesystem::path& path);
void write_tsv(const std::filesystem::path& path, const TextTable& table);

// Shortest decimal representation that round-trips exactly.
std::string format_double(double v);
double parse_double(std::string_view s);
std::int64_t parse_int(std::string_view s);

std::vector<std::string_view> split_ws(std::string_view s);

// 64-bit FNV-1a.
std::uint64_t fnv1a(std::span<const unsigned char> bytes);
std::uint64_t fnv1a(std::string_view s);
std::uint64_t fnv1a_file(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

}  // namespace dsu

#endif  // DSU_TEXT_HPP
