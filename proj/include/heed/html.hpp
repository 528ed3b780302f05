#pragma once

// Permissive HTML parsing into a small DOM, plus the inline-style subset the
// layout model understands.

#include <array>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace heed::html {

enum class Display { Block, Inline, None };

struct CssLength {
  enum class Unit { Px, Em, Percent };
  double value = 0;
  Unit unit = Unit::Px;
  bool operator==(const CssLength&) const = default;
};

// Parsed subset of a style="" attribute. Unset properties fall back to the
// tag defaults or inheritance.
struct InlineStyle {
  std::optional<CssLength> font_size;
  std::optional<int> font_weight;
  std::optional<std::array<int, 4>> color;
  std::optional<Display> display;
  std::optional<bool> visible;         // visibility: visible | hidden
  std::optional<bool> overflow_hidden;  // overflow: hidden | visible
  std::optional<double> width_px;
  std::optional<double> height_px;
  bool operator==(const InlineStyle&) const = default;
};

InlineStyle parse_inline_style(std::string_view css);
std::optional<std::array<int, 4>> parse_css_color(std::string_view value);

struct DomNode {
  enum class Kind { Document, Element, Text };

  Kind kind = Kind::Element;
  std::string tag;  // lower-case; empty for text/document
  std::vector<std::pair<std::string, std::string>> attributes;
  InlineStyle style;
  std::vector<DomNode> children;
  std::string text;  // text nodes only
  bool non_content = false;  // inside script/style/head/noscript/template/title

  bool is_text() const { return kind == Kind::Text; }
  bool is_element() const { return kind == Kind::Element; }
  const std::string* attr(std::string_view name) const;

  static DomNode document();
  static DomNode element(std::string tag,
                         std::vector<std::pair<std::string, std::string>> attributes = {});
  static DomNode text_node(std::string text);

  bool operator==(const DomNode&) const = default;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& message, std::size_t offset)
      : std::runtime_error(message + " at byte " + std::to_string(offset)), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

bool is_void_element(std::string_view tag);
bool is_raw_text_element(std::string_view tag);

// Unclosed tags are closed implicitly (HTML5 rules for p, li, dt/dd, table
// cells, options, headings). Stray end tags are ignored. Only input that
// ends inside a tag, comment or quoted attribute raises ParseError.
DomNode parse_html(std::string_view html);

// Decodes character references (&amp;, &#233;, &#xE9;, ...). &nbsp; becomes a
// plain space.
std::string decode_entities(std::string_view text);

// Inverse of parse_html for trees the parser can produce.
std::string serialize_html(const DomNode& node);

// Concatenated text of content (non-script, non-head) text leaves.
std::string content_text(const DomNode& node);

}  // namespace heed::html
