#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "heed/core.hpp"
#include "heed/html.hpp"
#include "heed/layout.hpp"

namespace heed {

// Raw (pre-quantization) features of every token in a layout.
std::vector<RawTokenFeatures> raw_token_features(const Layout& layout);

// Lays out an already-parsed document and builds its record. Spans are left
// empty: annotation is not extraction.
PageRecord record_from_dom(const html::DomNode& dom, double viewport_width, std::string page_id,
                           std::string language,
                           std::optional<std::string> source_url = std::nullopt);

// parse_html + record_from_dom. Propagates html::ParseError.
PageRecord extract_record(std::string_view html, double viewport_width, std::string page_id,
                          std::string language,
                          std::optional<std::string> source_url = std::nullopt);

}  // namespace heed
