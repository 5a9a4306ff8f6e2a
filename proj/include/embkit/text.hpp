#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

// Unicode helpers shared by the tokenizer and the curation filters.
namespace embkit::text {

std::string nfc(std::string_view utf8);
std::string lowercase(std::string_view utf8);

// NFC, lowercase, whitespace runs collapsed to one space, trimmed.
std::string normalize_for_match(std::string_view utf8);

std::string trim(std::string_view s);

std::vector<char32_t> code_points(std::string_view utf8);
std::string to_utf8(char32_t cp);

bool is_whitespace(char32_t cp);
bool is_cjk(char32_t cp);
// Letters, digits and CJK ideographs count as informative.
bool is_informative(char32_t cp);

// FNV-1a, 64-bit.
std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace embkit::text
