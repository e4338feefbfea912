#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace nmt::utf8 {

// Byte offset of the first invalid sequence, or nullopt if `text` is valid.
std::optional<std::size_t> find_invalid(std::string_view text);

// Splits into code points, each returned as its UTF-8 bytes. Input must be
// valid UTF-8.
std::vector<std::string> code_points(std::string_view text);

std::vector<std::string> split_whitespace(std::string_view text);

}  // namespace nmt::utf8
