#include "heed/layout.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <initializer_list>
#include <stdexcept>

namespace heed {

namespace {

bool in_list(std::string_view tag, std::initializer_list<std::string_view> list) {
  return std::find(list.begin(), list.end(), tag) != list.end();
}

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f'; }

std::optional<double> attr_px(const html::DomNode& node, std::string_view name) {
  const std::string* v = node.attr(name);
  if (!v) return std::nullopt;
  std::string_view s = *v;
  if (s.size() > 2 && s.substr(s.size() - 2) == "px") s.remove_suffix(2);
  double out = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(out) || out < 0)
    return std::nullopt;
  return out;
}

Rect unite(const Rect& a, const Rect& b) {
  const double x0 = std::min(a.x, b.x);
  const double y0 = std::min(a.y, b.y);
  const double x1 = std::max(a.right(), b.right());
  const double y1 = std::max(a.bottom(), b.bottom());
  return Rect{x0, y0, x1 - x0, y1 - y0};
}

bool contains(const Rect& outer, const Rect& inner) {
  constexpr double kEps = 1e-9;
  return inner.x >= outer.x - kEps && inner.y >= outer.y - kEps &&
         inner.right() <= outer.right() + kEps && inner.bottom() <= outer.bottom() + kEps;
}

std::string url_token(std::string_view src) {
  std::string out;
  for (char c : src) {
    if (is_space(c)) out += "%20";
    else out.push_back(c);
  }
  return out;
}

class LayoutEngine {
 public:
  explicit LayoutEngine(double viewport) : viewport_(viewport) {}

  Layout run(const html::DomNode& dom) {
    ResolvedStyle root_style;
    if (dom.is_element()) root_style = resolve_style(dom, ResolvedStyle{});
    root_style.display = html::Display::Block;
    layout_block(dom, 0, 0, 0, viewport_, root_style, true);
    apply_clipping();
    return std::move(out_);
  }

 private:
  struct Line {
    double left = 0;
    double right = 0;
    double pen = 0;
    double top = 0;
    double height = 0;
    bool empty = true;
  };

  void end_line(Line& line) {
    if (!line.empty) line.top += line.height;
    line.pen = line.left;
    line.height = 0;
    line.empty = true;
  }

  Rect layout_block(const html::DomNode& node, std::size_t parent, double x, double y,
                    double avail_width, const ResolvedStyle& style, bool is_root = false) {
    const std::size_t idx = out_.boxes.size();
    out_.boxes.push_back(LayoutBox{&node, is_root ? idx : parent, {}, style, style.visible, false});
    const double width = node.style.width_px.value_or(avail_width);

    Line line{x, x + width, x, y, 0, true};
    double extent_right = x + width;
    pending_break_ = true;
    layout_children(node, idx, style, line, extent_right);
    end_line(line);
    pending_break_ = true;

    const double content_height = line.top - y;
    double height = content_height;
    double final_width = width;
    if (node.style.height_px) {
      height = style.overflow_hidden ? *node.style.height_px
                                     : std::max(*node.style.height_px, content_height);
    }
    if (!style.overflow_hidden) final_width = std::max(width, extent_right - x);
    out_.boxes[idx].rect = Rect{x, y, final_width, height};
    return out_.boxes[idx].rect;
  }

  void layout_inline(const html::DomNode& node, std::size_t parent, const ResolvedStyle& style,
                     Line& line, double& extent_right) {
    const std::size_t idx = out_.boxes.size();
    out_.boxes.push_back(LayoutBox{&node, parent, {}, style, style.visible, false});
    const std::size_t first_token = out_.tokens.size();
    const Rect origin{line.pen, line.top, 0, 0};
    const bool anchor = node.tag == "a";
    if (anchor) ++anchor_depth_;
    layout_children(node, idx, style, line, extent_right);
    if (anchor) --anchor_depth_;

    bool any = false;
    Rect r = origin;
    for (std::size_t t = first_token; t < out_.tokens.size(); ++t) {
      r = any ? unite(r, out_.tokens[t].rect) : out_.tokens[t].rect;
      any = true;
    }
    for (std::size_t b = idx + 1; b < out_.boxes.size(); ++b) {
      r = any ? unite(r, out_.boxes[b].rect) : out_.boxes[b].rect;
      any = true;
    }
    out_.boxes[idx].rect = r;
  }

  void layout_children(const html::DomNode& node, std::size_t element_box,
                       const ResolvedStyle& style, Line& line, double& extent_right) {
    for (const auto& child : node.children) {
      if (child.non_content) continue;
      if (child.is_text()) {
        layout_text(child.text, element_box, style, line, extent_right);
        continue;
      }
      if (!child.is_element() || is_skipped_element(child.tag)) continue;
      const ResolvedStyle cs = resolve_style(child, style);
      if (cs.display == html::Display::None) continue;
      if (child.tag == "br") {
        line.height = std::max(line.height, kLineHeightEm * cs.font_size_px);
        line.empty = false;
        end_line(line);
        pending_break_ = true;
      } else if (child.tag == "img") {
        layout_image(child, element_box, cs, line, extent_right);
      } else if (cs.display == html::Display::Block) {
        end_line(line);
        const Rect r =
            layout_block(child, element_box, line.left, line.top, line.right - line.left, cs);
        line.top = r.bottom();
        extent_right = std::max(extent_right, r.right());
      } else {
        layout_inline(child, element_box, cs, line, extent_right);
      }
    }
  }

  Rect place(Line& line, double w, double h, double font_size, double& extent_right) {
    if (!line.empty && pending_ws_) line.pen += kGlyphAdvanceEm * font_size;
    if (!line.empty && line.pen + w > line.right + 1e-9) end_line(line);
    const Rect r{line.pen, line.top, w, h};
    line.pen += w;
    line.height = std::max(line.height, h);
    line.empty = false;
    extent_right = std::max(extent_right, r.right());
    return r;
  }

  void emit(std::string text, const Rect& rect, std::size_t element, const ResolvedStyle& style,
            bool is_image) {
    TokenBox t;
    t.text = std::move(text);
    t.rect = rect;
    t.element = element;
    t.style = style;
    t.is_image = is_image;
    t.is_anchor = anchor_depth_ > 0;
    t.preceded_by_linebreak = pending_break_;
    t.preceded_by_ws = pending_ws_ && !out_.tokens.empty();
    t.visible = style.visible;
    out_.tokens.push_back(std::move(t));
    pending_break_ = false;
    pending_ws_ = false;
  }

  void layout_text(std::string_view text, std::size_t element, const ResolvedStyle& style,
                   Line& line, double& extent_right) {
    std::size_t i = 0;
    while (i < text.size()) {
      if (is_space(text[i])) {
        if (!out_.tokens.empty()) pending_ws_ = true;
        ++i;
        continue;
      }
      std::size_t j = i;
      while (j < text.size() && !is_space(text[j])) ++j;
      const std::string_view word = text.substr(i, j - i);
      const double w = text_width(word, style.font_size_px);
      const Rect r = place(line, w, kLineHeightEm * style.font_size_px, style.font_size_px,
                           extent_right);
      emit(std::string(word), r, element, style, false);
      i = j;
    }
  }

  void layout_image(const html::DomNode& node, std::size_t parent, const ResolvedStyle& style,
                    Line& line, double& extent_right) {
    const std::string* src = node.attr("src");
    if (!src || src->find_first_not_of(" \t\n\r\f") == std::string::npos) return;
    const double w = node.style.width_px ? *node.style.width_px
                                         : attr_px(node, "width").value_or(kDefaultImageSizePx);
    const double h = node.style.height_px
                         ? *node.style.height_px
                         : attr_px(node, "height").value_or(kDefaultImageSizePx);
    const std::size_t idx = out_.boxes.size();
    const Rect r = place(line, w, h, style.font_size_px, extent_right);
    out_.boxes.push_back(LayoutBox{&node, parent, r, style, style.visible, false});
    std::string_view trimmed = *src;
    while (!trimmed.empty() && is_space(trimmed.front())) trimmed.remove_prefix(1);
    while (!trimmed.empty() && is_space(trimmed.back())) trimmed.remove_suffix(1);
    emit(url_token(trimmed), r, idx, style, true);
  }

  // A box or token is clipped when it pokes outside any overflow:hidden
  // ancestor (including its own element for tokens).
  bool outside_clip(std::size_t box, const Rect& rect, bool include_self) const {
    std::size_t b = box;
    bool first = true;
    while (true) {
      const LayoutBox& lb = out_.boxes[b];
      if ((include_self || !first) && lb.style.overflow_hidden && !contains(lb.rect, rect))
        return true;
      if (lb.parent == b) return false;
      b = lb.parent;
      first = false;
    }
  }

  void apply_clipping() {
    for (std::size_t b = 0; b < out_.boxes.size(); ++b)
      out_.boxes[b].clipped = outside_clip(b, out_.boxes[b].rect, false);
    for (auto& t : out_.tokens) t.clipped = outside_clip(t.element, t.rect, true);
  }

  double viewport_;
  Layout out_;
  bool pending_break_ = true;
  bool pending_ws_ = false;
  int anchor_depth_ = 0;
};

}  // namespace

bool is_skipped_element(std::string_view tag) {
  return in_list(tag, {"input", "select", "textarea", "button", "script", "style", "head",
                       "noscript", "template", "title"});
}

bool is_block_element(std::string_view tag) {
  return in_list(tag, {"html", "body", "div", "p", "h1", "h2", "h3", "h4", "h5", "h6", "ul",
                       "ol", "li", "section", "article", "header", "footer", "nav", "main",
                       "aside", "table", "thead", "tbody", "tfoot", "tr", "td", "th", "form",
                       "figure", "figcaption", "blockquote", "pre", "dl", "dt", "dd", "hr",
                       "address", "details", "summary", "fieldset", "caption", "menu"});
}

std::size_t glyph_count(std::string_view utf8) {
  std::size_t n = 0;
  for (char c : utf8)
    if ((static_cast<unsigned char>(c) & 0xC0) != 0x80) ++n;
  return n;
}

double text_width(std::string_view word, double font_size_px) {
  return static_cast<double>(glyph_count(word)) * kGlyphAdvanceEm * font_size_px;
}

ResolvedStyle resolve_style(const html::DomNode& element, const ResolvedStyle& parent) {
  ResolvedStyle s;
  s.font_size_px = parent.font_size_px;
  s.font_weight = parent.font_weight;
  s.color = parent.color;
  s.visible = parent.visible;
  s.overflow_hidden = false;
  const std::string& tag = element.tag;
  s.display = is_block_element(tag) ? html::Display::Block : html::Display::Inline;

  if (tag == "h1") s.font_size_px = 32;
  else if (tag == "h2") s.font_size_px = 24;
  else if (tag == "h3") s.font_size_px = 20;
  else if (tag == "h4") s.font_size_px = 16;
  else if (tag == "h5") s.font_size_px = 13;
  else if (tag == "h6") s.font_size_px = 11;
  else if (tag == "small") s.font_size_px = 13;
  else if (tag == "big") s.font_size_px = 19;
  if (in_list(tag, {"h1", "h2", "h3", "h4", "h5", "h6", "b", "strong", "th"})) s.font_weight = 700;
  if (tag == "a") s.color = {0, 0, 238, 255};

  const html::InlineStyle& st = element.style;
  if (st.font_size) {
    switch (st.font_size->unit) {
      case html::CssLength::Unit::Px: s.font_size_px = st.font_size->value; break;
      case html::CssLength::Unit::Em: s.font_size_px = st.font_size->value * parent.font_size_px; break;
      case html::CssLength::Unit::Percent:
        s.font_size_px = st.font_size->value / 100.0 * parent.font_size_px;
        break;
    }
  }
  if (st.font_weight) s.font_weight = *st.font_weight;
  if (st.color) s.color = *st.color;
  if (st.display) s.display = *st.display;
  if (st.visible) s.visible = *st.visible;
  if (st.overflow_hidden) s.overflow_hidden = *st.overflow_hidden;
  return s;
}

Layout layout(const html::DomNode& dom, double viewport_width) {
  if (!(viewport_width > 0) || !std::isfinite(viewport_width))
    throw std::invalid_argument("viewport width must be positive");
  return LayoutEngine(viewport_width).run(dom);
}

}  // namespace heed
