#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace cvr {

/// Lowercases and splits on runs of non-alphanumeric code points.
///
/// Input is treated as UTF-8. ASCII letters and digits are word characters;
/// non-ASCII code points are word characters unless they fall in a
/// punctuation/symbol block (Latin-1 symbols, General Punctuation, CJK
/// punctuation, fullwidth ASCII punctuation). Latin-1, Latin Extended-A,
/// Greek and Cyrillic capitals are folded to lowercase. No stemming, no
/// stop words. Invalid UTF-8 bytes act as separators.
std::vector<std::string> tokenize(std::string_view text);

std::string_view trim(std::string_view s);
std::string to_lower_ascii(std::string_view s);
std::string join(const std::vector<std::string>& parts, std::string_view sep);

/// Bijective base-26 option letters: 0 -> "A", 25 -> "Z", 26 -> "AA".
std::string option_letter(std::size_t index);

/// Inverse of option_letter; returns npos for anything but uppercase A-Z runs.
std::size_t option_index(std::string_view letters);

}  // namespace cvr
