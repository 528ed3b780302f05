#include "heed/extractor.hpp"

namespace heed {

std::vector<RawTokenFeatures> raw_token_features(const Layout& layout) {
  std::vector<RawTokenFeatures> out;
  out.reserve(layout.tokens.size());
  for (const TokenBox& t : layout.tokens) {
    RawTokenFeatures raw;
    raw.font_size_px = t.style.font_size_px;
    raw.font_weight = t.style.font_weight;
    raw.color_rgba = t.style.color;
    raw.element_bbox = layout.boxes[t.element].rect;
    raw.token_bbox = t.rect;
    raw.is_image = t.is_image;
    raw.is_anchor = t.is_anchor;
    raw.preceded_by_linebreak = t.preceded_by_linebreak;
    raw.preceded_by_ws = t.preceded_by_ws;
    raw.is_clipped = t.clipped;
    raw.is_visible = t.visible;
    out.push_back(raw);
  }
  return out;
}

PageRecord record_from_dom(const html::DomNode& dom, double viewport_width, std::string page_id,
                           std::string language, std::optional<std::string> source_url) {
  const Layout lay = layout(dom, viewport_width);
  PageRecord r;
  r.page_id = std::move(page_id);
  r.language = std::move(language);
  r.source_url = std::move(source_url);
  r.tokens.reserve(lay.tokens.size());
  for (const auto& t : lay.tokens) r.tokens.push_back(t.text);
  for (const auto& raw : raw_token_features(lay)) r.features.push_back(quantize_features(raw));
  return r;
}

PageRecord extract_record(std::string_view html, double viewport_width, std::string page_id,
                          std::string language, std::optional<std::string> source_url) {
  const html::DomNode dom = html::parse_html(html);
  return record_from_dom(dom, viewport_width, std::move(page_id), std::move(language),
                         std::move(source_url));
}

}  // namespace heed
