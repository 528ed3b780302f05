#include "heed/html.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <unordered_map>

namespace heed::html {

namespace {

bool is_ascii_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f';
}

std::string to_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && is_ascii_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_ascii_space(s.back())) s.remove_suffix(1);
  return s;
}

bool in_list(std::string_view tag, std::initializer_list<std::string_view> list) {
  return std::find(list.begin(), list.end(), tag) != list.end();
}

void append_utf8(std::string& out, std::uint32_t cp) {
  if (cp == 0 || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) cp = 0xFFFD;
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

const std::unordered_map<std::string_view, std::uint32_t>& named_entities() {
  static const std::unordered_map<std::string_view, std::uint32_t> table = {
      {"amp", '&'},     {"lt", '<'},       {"gt", '>'},       {"quot", '"'},
      {"apos", '\''},   {"nbsp", ' '},     {"copy", 0xA9},    {"reg", 0xAE},
      {"euro", 0x20AC}, {"pound", 0xA3},   {"yen", 0xA5},     {"cent", 0xA2},
      {"middot", 0xB7}, {"raquo", 0xBB},   {"laquo", 0xAB},   {"hellip", 0x2026},
      {"mdash", 0x2014}, {"ndash", 0x2013}, {"times", 0xD7},  {"rsaquo", 0x203A},
      {"lsaquo", 0x2039}, {"bull", 0x2022}, {"trade", 0x2122}, {"deg", 0xB0},
  };
  return table;
}

}  // namespace

std::string decode_entities(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    const char c = text[i];
    if (c != '&') {
      out.push_back(c);
      ++i;
      continue;
    }
    const std::size_t semi = text.find(';', i + 1);
    if (semi == std::string_view::npos || semi - i > 12) {
      out.push_back(c);
      ++i;
      continue;
    }
    const std::string_view name = text.substr(i + 1, semi - i - 1);
    bool decoded = false;
    if (!name.empty() && name[0] == '#') {
      std::uint32_t cp = 0;
      const bool hex = name.size() > 1 && (name[1] == 'x' || name[1] == 'X');
      const std::string_view digits = name.substr(hex ? 2 : 1);
      if (!digits.empty()) {
        auto [ptr, ec] =
            std::from_chars(digits.data(), digits.data() + digits.size(), cp, hex ? 16 : 10);
        if (ec == std::errc() && ptr == digits.data() + digits.size()) {
          append_utf8(out, cp == 0xA0 ? ' ' : cp);
          decoded = true;
        }
      }
    } else {
      const auto& table = named_entities();
      auto it = table.find(name);
      if (it != table.end()) {
        append_utf8(out, it->second);
        decoded = true;
      }
    }
    if (decoded) {
      i = semi + 1;
    } else {
      out.push_back(c);
      ++i;
    }
  }
  return out;
}

bool is_void_element(std::string_view tag) {
  return in_list(tag, {"area", "base", "br", "col", "embed", "hr", "img", "input", "link",
                       "meta", "param", "source", "track", "wbr"});
}

bool is_raw_text_element(std::string_view tag) {
  return in_list(tag, {"script", "style", "textarea", "title", "noscript", "xmp"});
}

namespace {

bool is_rcdata(std::string_view tag) { return tag == "textarea" || tag == "title"; }

bool is_non_content_root(std::string_view tag) {
  return in_list(tag, {"script", "style", "head", "noscript", "template", "title"});
}

std::optional<double> parse_number(std::string_view s) {
  s = trim(s);
  if (s.empty()) return std::nullopt;
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

std::optional<CssLength> parse_length(std::string_view v) {
  v = trim(v);
  const auto split = [&](std::string_view suffix) -> std::optional<double> {
    if (v.size() > suffix.size() && v.substr(v.size() - suffix.size()) == suffix)
      return parse_number(v.substr(0, v.size() - suffix.size()));
    return std::nullopt;
  };
  if (auto px = split("px")) return CssLength{*px, CssLength::Unit::Px};
  if (auto em = split("em")) return CssLength{*em, CssLength::Unit::Em};
  if (auto pct = split("%")) return CssLength{*pct, CssLength::Unit::Percent};
  if (auto bare = parse_number(v)) return CssLength{*bare, CssLength::Unit::Px};
  return std::nullopt;
}

std::optional<double> parse_px(std::string_view v) {
  auto len = parse_length(v);
  if (!len || len->unit != CssLength::Unit::Px || len->value < 0) return std::nullopt;
  return len->value;
}

int hex_digit(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

}  // namespace

std::optional<std::array<int, 4>> parse_css_color(std::string_view value) {
  const std::string v = to_lower(trim(value));
  if (v.empty()) return std::nullopt;
  if (v[0] == '#') {
    const std::string_view h = std::string_view(v).substr(1);
    for (char c : h)
      if (hex_digit(c) < 0) return std::nullopt;
    if (h.size() == 3 || h.size() == 4) {
      std::array<int, 4> c{0, 0, 0, 255};
      for (std::size_t k = 0; k < h.size(); ++k) c[k] = hex_digit(h[k]) * 17;
      return c;
    }
    if (h.size() == 6 || h.size() == 8) {
      std::array<int, 4> c{0, 0, 0, 255};
      for (std::size_t k = 0; k < h.size() / 2; ++k)
        c[k] = hex_digit(h[2 * k]) * 16 + hex_digit(h[2 * k + 1]);
      return c;
    }
    return std::nullopt;
  }
  if (v.rfind("rgb", 0) == 0) {
    const auto open = v.find('(');
    const auto close = v.rfind(')');
    if (open == std::string::npos || close == std::string::npos || close < open)
      return std::nullopt;
    std::vector<std::string_view> parts;
    std::string_view body = std::string_view(v).substr(open + 1, close - open - 1);
    while (true) {
      const auto comma = body.find(',');
      parts.push_back(trim(body.substr(0, comma)));
      if (comma == std::string_view::npos) break;
      body.remove_prefix(comma + 1);
    }
    if (parts.size() != 3 && parts.size() != 4) return std::nullopt;
    std::array<int, 4> c{0, 0, 0, 255};
    for (std::size_t k = 0; k < 3; ++k) {
      auto n = parse_number(parts[k]);
      if (!n) return std::nullopt;
      c[k] = static_cast<int>(std::clamp(std::lround(*n), 0L, 255L));
    }
    if (parts.size() == 4) {
      auto a = parse_number(parts[3]);
      if (!a) return std::nullopt;
      c[3] = static_cast<int>(std::clamp(std::lround(*a * 255.0), 0L, 255L));
    }
    return c;
  }
  static const std::unordered_map<std::string_view, std::array<int, 4>> named = {
      {"black", {0, 0, 0, 255}},       {"white", {255, 255, 255, 255}},
      {"red", {255, 0, 0, 255}},       {"green", {0, 128, 0, 255}},
      {"blue", {0, 0, 255, 255}},      {"gray", {128, 128, 128, 255}},
      {"grey", {128, 128, 128, 255}},  {"orange", {255, 165, 0, 255}},
      {"transparent", {0, 0, 0, 0}},   {"navy", {0, 0, 128, 255}},
      {"maroon", {128, 0, 0, 255}},    {"silver", {192, 192, 192, 255}},
  };
  auto it = named.find(v);
  if (it != named.end()) return it->second;
  return std::nullopt;
}

InlineStyle parse_inline_style(std::string_view css) {
  InlineStyle style;
  while (!css.empty()) {
    const auto semi = css.find(';');
    std::string_view decl = css.substr(0, semi);
    css = semi == std::string_view::npos ? std::string_view{} : css.substr(semi + 1);
    const auto colon = decl.find(':');
    if (colon == std::string_view::npos) continue;
    const std::string prop = to_lower(trim(decl.substr(0, colon)));
    std::string value = to_lower(trim(decl.substr(colon + 1)));
    if (auto imp = value.find("!important"); imp != std::string::npos)
      value = std::string(trim(std::string_view(value).substr(0, imp)));

    if (prop == "font-size") {
      static const std::unordered_map<std::string_view, double> keywords = {
          {"xx-small", 9}, {"x-small", 10}, {"small", 13},   {"medium", 16},
          {"large", 18},   {"x-large", 24}, {"xx-large", 32}};
      if (auto it = keywords.find(value); it != keywords.end()) {
        style.font_size = CssLength{it->second, CssLength::Unit::Px};
      } else if (auto len = parse_length(value); len && len->value >= 0) {
        style.font_size = *len;
      }
    } else if (prop == "font-weight") {
      if (value == "bold" || value == "bolder") {
        style.font_weight = 700;
      } else if (value == "normal" || value == "lighter") {
        style.font_weight = 400;
      } else if (auto n = parse_number(value)) {
        const long rounded = std::lround(*n / 100.0) * 100;
        style.font_weight = static_cast<int>(std::clamp(rounded, 100L, 900L));
      }
    } else if (prop == "color") {
      if (auto c = parse_css_color(value)) style.color = *c;
    } else if (prop == "display") {
      if (value == "none") style.display = Display::None;
      else if (value == "inline" || value == "inline-block") style.display = Display::Inline;
      else if (!value.empty()) style.display = Display::Block;
    } else if (prop == "visibility") {
      if (value == "hidden" || value == "collapse") style.visible = false;
      else if (value == "visible") style.visible = true;
    } else if (prop == "overflow") {
      if (value == "hidden" || value == "clip") style.overflow_hidden = true;
      else if (!value.empty()) style.overflow_hidden = false;
    } else if (prop == "width") {
      if (auto px = parse_px(value)) style.width_px = *px;
    } else if (prop == "height") {
      if (auto px = parse_px(value)) style.height_px = *px;
    }
  }
  return style;
}

const std::string* DomNode::attr(std::string_view name) const {
  for (const auto& [k, v] : attributes)
    if (k == name) return &v;
  return nullptr;
}

DomNode DomNode::document() {
  DomNode n;
  n.kind = Kind::Document;
  return n;
}

DomNode DomNode::element(std::string tag,
                         std::vector<std::pair<std::string, std::string>> attributes) {
  DomNode n;
  n.kind = Kind::Element;
  n.tag = std::move(tag);
  n.attributes = std::move(attributes);
  if (const auto* s = n.attr("style")) n.style = parse_inline_style(*s);
  return n;
}

DomNode DomNode::text_node(std::string text) {
  DomNode n;
  n.kind = Kind::Text;
  n.text = std::move(text);
  return n;
}

namespace {

class TreeBuilder {
 public:
  explicit TreeBuilder(std::string_view src) : src_(src), root_(DomNode::document()) {
    stack_.push_back(&root_);
  }

  DomNode run() {
    while (pos_ < src_.size()) {
      if (src_[pos_] == '<' && pos_ + 1 < src_.size()) {
        const char next = src_[pos_ + 1];
        if (next == '!') {
          markup_declaration();
          continue;
        }
        if (next == '/') {
          end_tag();
          continue;
        }
        if (next == '?') {
          bogus_comment();
          continue;
        }
        if (std::isalpha(static_cast<unsigned char>(next))) {
          start_tag();
          continue;
        }
      }
      text();
    }
    flush_text();
    mark_non_content(root_, false);
    return std::move(root_);
  }

 private:
  DomNode& current() { return *stack_.back(); }

  void flush_text() {
    if (pending_text_.empty()) return;
    current().children.push_back(DomNode::text_node(decode_entities(pending_text_)));
    pending_text_.clear();
  }

  void text() {
    const std::size_t lt = src_.find('<', pos_ + 1);
    const std::size_t end = lt == std::string_view::npos ? src_.size() : lt;
    pending_text_.append(src_.substr(pos_, end - pos_));
    pos_ = end;
  }

  void markup_declaration() {
    const std::size_t start = pos_;
    if (src_.substr(pos_, 4) == "<!--") {
      const std::size_t close = src_.find("-->", pos_ + 4);
      if (close == std::string_view::npos) throw ParseError("unterminated comment", start);
      pos_ = close + 3;
      return;
    }
    const std::size_t close = src_.find('>', pos_ + 2);
    if (close == std::string_view::npos) throw ParseError("unterminated declaration", start);
    pos_ = close + 1;
  }

  void bogus_comment() {
    const std::size_t close = src_.find('>', pos_ + 2);
    if (close == std::string_view::npos) throw ParseError("unterminated processing instruction", pos_);
    pos_ = close + 1;
  }

  std::string read_name() {
    const std::size_t start = pos_;
    while (pos_ < src_.size() && !is_ascii_space(src_[pos_]) && src_[pos_] != '>' &&
           src_[pos_] != '/' && src_[pos_] != '=')
      ++pos_;
    return to_lower(src_.substr(start, pos_ - start));
  }

  void skip_space() {
    while (pos_ < src_.size() && is_ascii_space(src_[pos_])) ++pos_;
  }

  void end_tag() {
    const std::size_t start = pos_;
    pos_ += 2;
    const std::string name = read_name();
    const std::size_t close = src_.find('>', pos_);
    if (close == std::string_view::npos) throw ParseError("unterminated end tag", start);
    pos_ = close + 1;
    if (name.empty()) return;
    flush_text();
    close_element(name);
  }

  void start_tag() {
    const std::size_t start = pos_;
    ++pos_;
    std::string name = read_name();
    std::vector<std::pair<std::string, std::string>> attrs;
    bool self_closing = false;
    while (true) {
      skip_space();
      if (pos_ >= src_.size()) throw ParseError("unterminated start tag <" + name, start);
      const char c = src_[pos_];
      if (c == '>') {
        ++pos_;
        break;
      }
      if (c == '/') {
        ++pos_;
        if (pos_ < src_.size() && src_[pos_] == '>') {
          self_closing = true;
          ++pos_;
          break;
        }
        continue;
      }
      std::string attr_name = read_name();
      if (attr_name.empty()) {
        ++pos_;  // stray '='
        continue;
      }
      skip_space();
      std::string value;
      if (pos_ < src_.size() && src_[pos_] == '=') {
        ++pos_;
        skip_space();
        if (pos_ >= src_.size()) throw ParseError("unterminated attribute", start);
        const char q = src_[pos_];
        if (q == '"' || q == '\'') {
          const std::size_t close = src_.find(q, pos_ + 1);
          if (close == std::string_view::npos)
            throw ParseError("unterminated attribute value", pos_);
          value = decode_entities(src_.substr(pos_ + 1, close - pos_ - 1));
          pos_ = close + 1;
        } else {
          const std::size_t vstart = pos_;
          while (pos_ < src_.size() && !is_ascii_space(src_[pos_]) && src_[pos_] != '>') ++pos_;
          value = decode_entities(src_.substr(vstart, pos_ - vstart));
        }
      }
      const bool duplicate = std::any_of(attrs.begin(), attrs.end(),
                                         [&](const auto& kv) { return kv.first == attr_name; });
      if (!duplicate) attrs.emplace_back(std::move(attr_name), std::move(value));
    }

    flush_text();
    implicit_close_before(name);
    current().children.push_back(DomNode::element(name, std::move(attrs)));
    DomNode* node = &current().children.back();
    if (is_void_element(name) || self_closing) return;
    if (is_raw_text_element(name)) {
      raw_text(*node);
      return;
    }
    stack_.push_back(node);
  }

  void raw_text(DomNode& node) {
    const std::string close_tag = "</" + node.tag;
    std::size_t search = pos_;
    std::size_t end = src_.size();
    std::size_t after = src_.size();
    while (search < src_.size()) {
      const std::size_t lt = src_.find("</", search);
      if (lt == std::string_view::npos) break;
      if (to_lower(src_.substr(lt, close_tag.size())) == close_tag) {
        const std::size_t gt = src_.find('>', lt);
        if (gt == std::string_view::npos) throw ParseError("unterminated end tag", lt);
        end = lt;
        after = gt + 1;
        break;
      }
      search = lt + 2;
    }
    const std::string_view body = src_.substr(pos_, end - pos_);
    if (!body.empty()) {
      node.children.push_back(
          DomNode::text_node(is_rcdata(node.tag) ? decode_entities(body) : std::string(body)));
    }
    pos_ = after;
  }

  // Index of the innermost open element named `tag`, searching down to (not
  // past) any of the scope boundaries. 0 when absent.
  std::size_t find_in_scope(std::string_view tag,
                            std::initializer_list<std::string_view> boundaries) const {
    for (std::size_t i = stack_.size(); i-- > 1;) {
      if (stack_[i]->tag == tag) return i;
      if (in_list(stack_[i]->tag, boundaries)) return 0;
    }
    return 0;
  }

  void pop_to(std::size_t index) { stack_.resize(index); }

  void close_if_in_scope(std::string_view tag,
                         std::initializer_list<std::string_view> boundaries) {
    if (const std::size_t i = find_in_scope(tag, boundaries); i > 0) pop_to(i);
  }

  void implicit_close_before(std::string_view tag) {
    if (in_list(tag, {"address", "article", "aside", "blockquote", "details", "div", "dl",
                      "fieldset", "figcaption", "figure", "footer", "form", "h1", "h2", "h3",
                      "h4", "h5", "h6", "header", "hr", "main", "menu", "nav", "ol", "p",
                      "pre", "section", "table", "ul", "li", "dd", "dt"})) {
      close_if_in_scope(
          "p", {"html", "table", "td", "th", "caption", "button", "marquee", "object", "template"});
    }
    if (tag == "li") {
      close_if_in_scope("li", {"html", "table", "td", "th", "ul", "ol"});
    } else if (tag == "dt" || tag == "dd") {
      close_if_in_scope("dt", {"html", "table", "td", "th", "dl"});
      close_if_in_scope("dd", {"html", "table", "td", "th", "dl"});
    } else if (tag == "td" || tag == "th") {
      close_if_in_scope("td", {"html", "table", "tr"});
      close_if_in_scope("th", {"html", "table", "tr"});
    } else if (tag == "tr") {
      close_if_in_scope("tr", {"html", "table"});
    } else if (tag == "option") {
      close_if_in_scope("option", {"html", "select"});
    }
    if (in_list(tag, {"h1", "h2", "h3", "h4", "h5", "h6"}) &&
        in_list(current().tag, {"h1", "h2", "h3", "h4", "h5", "h6"})) {
      stack_.pop_back();
    }
  }

  void close_element(std::string_view name) {
    for (std::size_t i = stack_.size(); i-- > 1;) {
      if (stack_[i]->tag == name) {
        pop_to(i);
        return;
      }
    }
  }

  static void mark_non_content(DomNode& node, bool inherited) {
    node.non_content = inherited || (node.is_element() && is_non_content_root(node.tag));
    for (auto& child : node.children) mark_non_content(child, node.non_content);
  }

  std::string_view src_;
  std::size_t pos_ = 0;
  DomNode root_;
  std::vector<DomNode*> stack_;
  std::string pending_text_;
};

void escape_into(std::string& out, std::string_view s, bool attribute) {
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"':
        if (attribute) out += "&quot;";
        else out.push_back(c);
        break;
      default: out.push_back(c);
    }
  }
}

void serialize_into(std::string& out, const DomNode& node, bool raw_parent) {
  switch (node.kind) {
    case DomNode::Kind::Document:
      for (const auto& c : node.children) serialize_into(out, c, false);
      return;
    case DomNode::Kind::Text:
      if (raw_parent) out += node.text;
      else escape_into(out, node.text, false);
      return;
    case DomNode::Kind::Element:
      break;
  }
  out.push_back('<');
  out += node.tag;
  for (const auto& [k, v] : node.attributes) {
    out.push_back(' ');
    out += k;
    out += "=\"";
    escape_into(out, v, true);
    out.push_back('"');
  }
  out.push_back('>');
  if (is_void_element(node.tag)) return;
  const bool raw = is_raw_text_element(node.tag) && !is_rcdata(node.tag);
  for (const auto& c : node.children) serialize_into(out, c, raw);
  out += "</";
  out += node.tag;
  out.push_back('>');
}

void collect_text(const DomNode& node, std::string& out) {
  if (node.non_content) return;
  if (node.is_text()) out += node.text;
  for (const auto& c : node.children) collect_text(c, out);
}

}  // namespace

DomNode parse_html(std::string_view html) { return TreeBuilder(html).run(); }

std::string serialize_html(const DomNode& node) {
  std::string out;
  serialize_into(out, node, false);
  return out;
}

std::string content_text(const DomNode& node) {
  std::string out;
  collect_text(node, out);
  return out;
}

}  // namespace heed::html
