#pragma once

#include <cstdint>
#include <string_view>

namespace master {

inline constexpr int kGlyphWidth = 5;
inline constexpr int kGlyphHeight = 7;

/// 7 rows of 5-bit glyph data for 0-9, A-Z, a-z (bit 4 = leftmost column),
/// or nullptr for anything else.
const std::uint8_t* glyph_rows(char c);

/// True for symbols the procedural font can draw (single ASCII alnum).
bool renderable_symbol(std::string_view symbol);

}  // namespace master
