#include "heed/core.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace heed {

using ordered_json = nlohmann::ordered_json;

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) {
    c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (c == '_' || c == ' ') c = '-';
  }
  return out;
}

constexpr std::array<std::size_t, 6> kFontStyleIdx = {0, 1, 2, 3, 4, 5};
constexpr std::array<std::size_t, 8> kBoxIdx = {6, 7, 8, 9, 10, 11, 12, 13};
constexpr std::array<std::size_t, 2> kCategoryIdx = {14, 15};
constexpr std::array<std::size_t, 2> kPrecedingIdx = {16, 17};
constexpr std::array<std::size_t, 2> kClickIdx = {18, 19};

int box_bucket(double v) {
  const double b = std::floor(v / kBoxBucketPx);
  return static_cast<int>(std::clamp(b, 0.0, static_cast<double>(kMaxBoxBucket)));
}

bool finite_non_negative_box(const Rect& r) {
  return std::isfinite(r.x) && std::isfinite(r.y) && std::isfinite(r.w) &&
         std::isfinite(r.h) && r.w >= 0 && r.h >= 0;
}

}  // namespace

std::string_view task_name(Task task) {
  switch (task) {
    case Task::Price: return "price";
    case Task::Name: return "name";
    case Task::Image: return "image";
  }
  return "?";
}

std::string_view task_label(Task task) {
  switch (task) {
    case Task::Price: return "Price";
    case Task::Name: return "Name";
    case Task::Image: return "Image";
  }
  return "?";
}

Task parse_task(std::string_view name) {
  const std::string n = lower(name);
  if (n == "price") return Task::Price;
  if (n == "name") return Task::Name;
  if (n == "image") return Task::Image;
  throw std::invalid_argument("unknown task '" + std::string(name) +
                              "' (expected price|name|image)");
}

std::span<const std::size_t> feature_category_indices(FeatureCategory category) {
  switch (category) {
    case FeatureCategory::FontStyle: return kFontStyleIdx;
    case FeatureCategory::BoundingBox: return kBoxIdx;
    case FeatureCategory::Category: return kCategoryIdx;
    case FeatureCategory::PrecedingToken: return kPrecedingIdx;
    case FeatureCategory::ClickabilityVisibility: return kClickIdx;
  }
  return {};
}

std::string_view feature_category_name(FeatureCategory category) {
  switch (category) {
    case FeatureCategory::FontStyle: return "font-style";
    case FeatureCategory::BoundingBox: return "bounding-box";
    case FeatureCategory::Category: return "category";
    case FeatureCategory::PrecedingToken: return "preceding-token";
    case FeatureCategory::ClickabilityVisibility: return "clickability-visibility";
  }
  return "?";
}

FeatureCategory parse_feature_category(std::string_view name) {
  const std::string n = lower(name);
  if (n == "font-style") return FeatureCategory::FontStyle;
  if (n == "bounding-box") return FeatureCategory::BoundingBox;
  if (n == "category") return FeatureCategory::Category;
  if (n == "preceding-token") return FeatureCategory::PrecedingToken;
  if (n == "clickability-visibility" || n == "clickability&visibility" ||
      n == "clickability-&-visibility")
    return FeatureCategory::ClickabilityVisibility;
  throw std::invalid_argument(
      "unknown feature category '" + std::string(name) +
      "' (expected font-style|bounding-box|category|preceding-token|clickability-visibility)");
}

std::vector<std::string> validate_raw(const RawTokenFeatures& raw) {
  std::vector<std::string> out;
  if (!std::isfinite(raw.font_size_px) || raw.font_size_px < 0)
    out.push_back("font_size_px must be finite and >= 0");
  if (raw.font_weight < 100 || raw.font_weight > 900)
    out.push_back("font_weight out of range [100,900]: " + std::to_string(raw.font_weight));
  for (std::size_t c = 0; c < 4; ++c) {
    if (raw.color_rgba[c] < 0 || raw.color_rgba[c] > 255)
      out.push_back("color_rgba[" + std::to_string(c) + "] out of range [0,255]: " +
                    std::to_string(raw.color_rgba[c]));
  }
  if (!finite_non_negative_box(raw.element_bbox))
    out.push_back("element_bbox must be finite with w,h >= 0");
  if (!finite_non_negative_box(raw.token_bbox))
    out.push_back("token_bbox must be finite with w,h >= 0");
  // Clipped tokens legitimately overflow their element box.
  if (!raw.is_clipped && out.empty()) {
    constexpr double kSlack = 0.5;
    const Rect& e = raw.element_bbox;
    const Rect& t = raw.token_bbox;
    if (t.x < e.x - kSlack || t.y < e.y - kSlack || t.right() > e.right() + kSlack ||
        t.bottom() > e.bottom() + kSlack)
      out.push_back("token_bbox not contained in element_bbox");
  }
  return out;
}

FeatureVector quantize_features(const RawTokenFeatures& raw) {
  if (!std::isfinite(raw.font_size_px) || raw.font_size_px < 0)
    throw ValidationError("font_size_px out of range: " + std::to_string(raw.font_size_px));
  if (raw.font_weight < 100 || raw.font_weight > 900)
    throw ValidationError("font_weight out of range [100,900]: " +
                          std::to_string(raw.font_weight));
  for (std::size_t c = 0; c < 4; ++c) {
    if (raw.color_rgba[c] < 0 || raw.color_rgba[c] > 255)
      throw ValidationError("color_rgba[" + std::to_string(c) + "] out of range [0,255]: " +
                            std::to_string(raw.color_rgba[c]));
  }
  if (!finite_non_negative_box(raw.element_bbox))
    throw ValidationError("element_bbox must be finite with w,h >= 0");
  if (!finite_non_negative_box(raw.token_bbox))
    throw ValidationError("token_bbox must be finite with w,h >= 0");
  FeatureVector v{};
  v[fidx::kFontSize] = static_cast<std::int32_t>(
      std::clamp<long>(std::lround(raw.font_size_px), 0, kMaxFontBucket));
  v[fidx::kFontWeight] = raw.font_weight / 100;
  for (std::size_t c = 0; c < 4; ++c) v[fidx::kColor + c] = raw.color_rgba[c];
  const auto put_box = [&](std::size_t base, const Rect& r) {
    v[base + 0] = box_bucket(r.x);
    v[base + 1] = box_bucket(r.y);
    v[base + 2] = box_bucket(r.w);
    v[base + 3] = box_bucket(r.h);
  };
  put_box(fidx::kElementBox, raw.element_bbox);
  put_box(fidx::kTokenBox, raw.token_bbox);
  v[fidx::kIsImage] = raw.is_image ? 1 : 0;
  v[fidx::kIsAnchor] = raw.is_anchor ? 1 : 0;
  v[fidx::kLineBreak] = raw.preceded_by_linebreak ? 1 : 0;
  v[fidx::kWhitespace] = raw.preceded_by_ws ? 1 : 0;
  v[fidx::kClipped] = raw.is_clipped ? 1 : 0;
  v[fidx::kVisible] = raw.is_visible ? 1 : 0;
  return v;
}

RawTokenFeatures dequantize_midpoint(const FeatureVector& f) {
  RawTokenFeatures raw;
  raw.font_size_px = f[fidx::kFontSize];
  raw.font_weight = std::max(1, f[fidx::kFontWeight]) * 100;
  for (std::size_t c = 0; c < 4; ++c) raw.color_rgba[c] = f[fidx::kColor + c];
  const auto mid = [](std::int32_t bucket) { return bucket * kBoxBucketPx + kBoxBucketPx / 2; };
  const auto get_box = [&](std::size_t base) {
    return Rect{mid(f[base]), mid(f[base + 1]), mid(f[base + 2]), mid(f[base + 3])};
  };
  raw.element_bbox = get_box(fidx::kElementBox);
  raw.token_bbox = get_box(fidx::kTokenBox);
  raw.is_image = f[fidx::kIsImage] != 0;
  raw.is_anchor = f[fidx::kIsAnchor] != 0;
  raw.preceded_by_linebreak = f[fidx::kLineBreak] != 0;
  raw.preceded_by_ws = f[fidx::kWhitespace] != 0;
  raw.is_clipped = f[fidx::kClipped] != 0;
  raw.is_visible = f[fidx::kVisible] != 0;
  return raw;
}

std::vector<std::string> validate_feature_vector(const FeatureVector& f,
                                                 std::string_view prefix) {
  std::vector<std::string> out;
  for (std::size_t j = 0; j < kFeatureCount; ++j) {
    const int lo = (j == fidx::kFontWeight) ? 1 : 0;
    if (f[j] < lo || f[j] >= kFeatureVocab[j]) {
      out.push_back(std::string(prefix) + "[" + std::to_string(j) + "] out of range: " +
                    std::to_string(f[j]));
    }
  }
  return out;
}

std::vector<std::string> validate_record(const PageRecord& r) {
  std::vector<std::string> out;
  const std::size_t n = r.tokens.size();
  if (r.page_id.empty()) out.emplace_back("page_id is empty");
  if (r.language.empty()) out.emplace_back("language is empty");
  if (n == 0) out.emplace_back("tokens is empty");
  if (r.features.size() != n) {
    out.push_back("features length " + std::to_string(r.features.size()) +
                  " != tokens length " + std::to_string(n));
  }
  for (std::size_t i = 0; i < n; ++i) {
    const std::string& tok = r.tokens[i];
    if (tok.empty()) {
      out.push_back("tokens[" + std::to_string(i) + "] is empty");
    } else if (std::any_of(tok.begin(), tok.end(), [](char c) {
                 return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f';
               })) {
      out.push_back("tokens[" + std::to_string(i) + "] contains whitespace");
    }
  }
  for (std::size_t i = 0; i < r.features.size(); ++i) {
    auto v = validate_feature_vector(r.features[i], "features[" + std::to_string(i) + "]");
    out.insert(out.end(), v.begin(), v.end());
  }
  std::array<int, kTaskCount> last_end;
  last_end.fill(-1);
  for (std::size_t s = 0; s < r.spans.size(); ++s) {
    const EntitySpan& sp = r.spans[s];
    const std::string at = "spans[" + std::to_string(s) + "]";
    if (sp.start < 0) out.push_back(at + ".start out of range");
    if (sp.end < sp.start) out.push_back(at + ".end before start");
    if (sp.end >= static_cast<int>(n)) out.push_back(at + ".end out of range");
    const auto t = static_cast<std::size_t>(sp.task);
    if (sp.start <= last_end[t]) out.push_back(at + " overlaps or is unsorted within task");
    last_end[t] = std::max(last_end[t], sp.end);
  }
  return out;
}

void sort_spans(std::vector<EntitySpan>& spans) {
  std::stable_sort(spans.begin(), spans.end(), [](const EntitySpan& a, const EntitySpan& b) {
    if (a.task != b.task) return a.task < b.task;
    return a.start < b.start;
  });
}

std::vector<EntitySpan> spans_for_task(std::span<const EntitySpan> spans, Task task) {
  std::vector<EntitySpan> out;
  for (const auto& s : spans)
    if (s.task == task) out.push_back(s);
  std::sort(out.begin(), out.end(),
            [](const EntitySpan& a, const EntitySpan& b) { return a.start < b.start; });
  return out;
}

std::string serialize_record(const PageRecord& r) {
  ordered_json j;
  j["page_id"] = r.page_id;
  j["language"] = r.language;
  j["tokens"] = r.tokens;
  ordered_json feats = ordered_json::array();
  for (const auto& f : r.features) feats.push_back(f);
  j["features"] = std::move(feats);
  ordered_json spans = ordered_json::array();
  for (const auto& s : r.spans) {
    spans.push_back({{"task", task_name(s.task)}, {"start", s.start}, {"end", s.end}});
  }
  j["spans"] = std::move(spans);
  j["source_url"] = r.source_url ? ordered_json(*r.source_url) : ordered_json(nullptr);
  return j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
}

namespace {

const ordered_json& require(const ordered_json& j, const char* field) {
  auto it = j.find(field);
  if (it == j.end()) throw ValidationError(std::string("missing field '") + field + "'");
  return *it;
}

std::string require_string(const ordered_json& j, const char* field) {
  const auto& v = require(j, field);
  if (!v.is_string()) throw ValidationError(std::string("field '") + field + "' must be a string");
  return v.get<std::string>();
}

int require_int(const ordered_json& j, const char* field, const std::string& where) {
  const auto& v = require(j, field);
  if (!v.is_number_integer())
    throw ValidationError("field '" + where + "." + field + "' must be an integer");
  return v.get<int>();
}

}  // namespace

PageRecord parse_record(std::string_view line) {
  ordered_json j;
  try {
    j = ordered_json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw ValidationError("record must be a JSON object");

  PageRecord r;
  r.page_id = require_string(j, "page_id");
  r.language = require_string(j, "language");

  const auto& tokens = require(j, "tokens");
  if (!tokens.is_array()) throw ValidationError("field 'tokens' must be an array");
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (!tokens[i].is_string())
      throw ValidationError("field 'tokens[" + std::to_string(i) + "]' must be a string");
    r.tokens.push_back(tokens[i].get<std::string>());
  }

  const auto& feats = require(j, "features");
  if (!feats.is_array()) throw ValidationError("field 'features' must be an array");
  for (std::size_t i = 0; i < feats.size(); ++i) {
    const auto& row = feats[i];
    const std::string at = "features[" + std::to_string(i) + "]";
    if (!row.is_array() || row.size() != kFeatureCount)
      throw ValidationError("field '" + at + "' must be an array of 20 integers");
    FeatureVector f{};
    for (std::size_t k = 0; k < kFeatureCount; ++k) {
      if (!row[k].is_number_integer())
        throw ValidationError("field '" + at + "[" + std::to_string(k) + "]' must be an integer");
      f[k] = row[k].get<std::int32_t>();
    }
    r.features.push_back(f);
  }

  const auto& spans = require(j, "spans");
  if (!spans.is_array()) throw ValidationError("field 'spans' must be an array");
  for (std::size_t i = 0; i < spans.size(); ++i) {
    const std::string at = "spans[" + std::to_string(i) + "]";
    const auto& s = spans[i];
    if (!s.is_object()) throw ValidationError("field '" + at + "' must be an object");
    const auto& task = require(s, "task");
    if (!task.is_string()) throw ValidationError("field '" + at + ".task' must be a string");
    EntitySpan span;
    try {
      span.task = parse_task(task.get<std::string>());
    } catch (const std::invalid_argument&) {
      throw ValidationError("field '" + at + ".task' must be price|name|image");
    }
    span.start = require_int(s, "start", at);
    span.end = require_int(s, "end", at);
    r.spans.push_back(span);
  }

  auto url = j.find("source_url");
  if (url != j.end() && !url->is_null()) {
    if (!url->is_string()) throw ValidationError("field 'source_url' must be a string or null");
    r.source_url = url->get<std::string>();
  }
  return r;
}

void write_records(std::span<const PageRecord> records, const std::filesystem::path& path) {
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto violations = validate_record(records[i]);
    if (!violations.empty())
      throw ValidationError("record " + std::to_string(i) + " (" + records[i].page_id +
                            "): " + violations.front());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  for (const auto& r : records) out << serialize_record(r) << '\n';
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::vector<PageRecord> read_records(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path.string());
  std::vector<PageRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno) + ": ";
    PageRecord r;
    try {
      r = parse_record(line);
    } catch (const ValidationError& e) {
      throw FormatError(where + e.what(), lineno);
    }
    auto violations = validate_record(r);
    if (!violations.empty()) throw FormatError(where + violations.front(), lineno);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace heed
