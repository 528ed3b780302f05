#pragma once

// Simplified box layout: blocks stack vertically at full container width,
// inline content flows left to right and wraps at the container edge. Glyphs
// are fixed-width (0.6 em) and lines are 1.2 em tall.

#include <array>
#include <string>
#include <string_view>
#include <vector>

#include "heed/core.hpp"
#include "heed/html.hpp"

namespace heed {

inline constexpr double kGlyphAdvanceEm = 0.6;
inline constexpr double kLineHeightEm = 1.2;
inline constexpr double kDefaultFontSizePx = 16.0;
inline constexpr double kDefaultViewportPx = 1280.0;
inline constexpr double kDefaultImageSizePx = 150.0;

struct ResolvedStyle {
  double font_size_px = kDefaultFontSizePx;
  int font_weight = 400;
  std::array<int, 4> color = {0, 0, 0, 255};
  html::Display display = html::Display::Block;
  bool visible = true;
  bool overflow_hidden = false;
};

struct LayoutBox {
  const html::DomNode* node = nullptr;
  std::size_t parent = 0;  // index into Layout::boxes; the root is its own parent
  Rect rect;
  ResolvedStyle style;
  bool visible = true;
  bool clipped = false;
};

// One emitted token: a whitespace-delimited word or an image URL.
struct TokenBox {
  std::string text;
  Rect rect;
  std::size_t element = 0;  // box of the element that directly holds the token
  ResolvedStyle style;
  bool is_image = false;
  bool is_anchor = false;
  bool preceded_by_linebreak = false;
  bool preceded_by_ws = false;
  bool visible = true;
  bool clipped = false;
};

struct Layout {
  std::vector<LayoutBox> boxes;  // document order, boxes[0] is the root
  std::vector<TokenBox> tokens;  // reading order
};

// Elements whose content never produces tokens.
bool is_skipped_element(std::string_view tag);
bool is_block_element(std::string_view tag);

// Code points in a UTF-8 string.
std::size_t glyph_count(std::string_view utf8);

double text_width(std::string_view word, double font_size_px);

ResolvedStyle resolve_style(const html::DomNode& element, const ResolvedStyle& parent);

// `dom` must outlive the returned Layout. Throws std::invalid_argument when
// viewport_width <= 0.
Layout layout(const html::DomNode& dom, double viewport_width = kDefaultViewportPx);

}  // namespace heed
