#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace polyroute::text {

// Decodes UTF-8; malformed sequences become U+FFFD, one per bad byte.
std::vector<char32_t> decode_utf8(std::string_view text);

void append_utf8(std::string& out, char32_t cp);
std::string encode_utf8(const std::vector<char32_t>& cps);

// Unicode general category P* membership.
bool is_punctuation(char32_t cp);

// Simple (1:1) lowercase mapping; identity when none exists.
char32_t to_lower(char32_t cp);

bool is_space(char32_t cp);

std::string lowercase(std::string_view text);

}  // namespace polyroute::text
