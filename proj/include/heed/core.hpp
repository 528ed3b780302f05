#pragma once

// Domain types shared by every stage of the pipeline: hypertext feature
// vectors, entity spans, page records, and the JSONL dataset format.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace heed {

enum class Task : std::uint8_t { Price = 0, Name = 1, Image = 2 };

inline constexpr std::array<Task, 3> kAllTasks = {Task::Price, Task::Name, Task::Image};
inline constexpr std::size_t kTaskCount = kAllTasks.size();

// Lower-case wire name ("price", "name", "image").
std::string_view task_name(Task task);
// Title-case display name ("Price", "Name", "Image").
std::string_view task_label(Task task);
// Accepts either spelling, case-insensitive. Throws std::invalid_argument.
Task parse_task(std::string_view name);

inline constexpr std::size_t kFeatureCount = 20;

// Index layout of a FeatureVector.
namespace fidx {
inline constexpr std::size_t kFontSize = 0;
inline constexpr std::size_t kFontWeight = 1;
inline constexpr std::size_t kColor = 2;  // 2..5 = R,G,B,A
inline constexpr std::size_t kElementBox = 6;  // 6..9 = x,y,w,h
inline constexpr std::size_t kTokenBox = 10;  // 10..13 = x,y,w,h
inline constexpr std::size_t kIsImage = 14;
inline constexpr std::size_t kIsAnchor = 15;
inline constexpr std::size_t kLineBreak = 16;
inline constexpr std::size_t kWhitespace = 17;
inline constexpr std::size_t kClipped = 18;
inline constexpr std::size_t kVisible = 19;
}  // namespace fidx

// Vocabulary size of each feature index. Embedding tables are sized from this.
inline constexpr std::array<int, kFeatureCount> kFeatureVocab = {
    128, 10,                                            // font size, weight
    256, 256, 256, 256,                                 // RGBA
    1024, 1024, 1024, 1024, 1024, 1024, 1024, 1024,    // element + token boxes
    2, 2, 2, 2, 2, 2};                                  // boolean flags

inline constexpr double kBoxBucketPx = 8.0;
inline constexpr int kMaxBoxBucket = 1023;
inline constexpr int kMaxFontBucket = 127;

// The five hypertext feature categories and the indices each one owns.
enum class FeatureCategory : std::uint8_t {
  FontStyle,
  BoundingBox,
  Category,
  PrecedingToken,
  ClickabilityVisibility,
};
std::span<const std::size_t> feature_category_indices(FeatureCategory category);
std::string_view feature_category_name(FeatureCategory category);
// Accepts "font-style", "bounding-box", "category", "preceding-token",
// "clickability-visibility" (case-insensitive, '_' or ' ' allowed for '-').
FeatureCategory parse_feature_category(std::string_view name);

using FeatureVector = std::array<std::int32_t, kFeatureCount>;

struct Rect {
  double x = 0;
  double y = 0;
  double w = 0;
  double h = 0;

  double right() const { return x + w; }
  double bottom() const { return y + h; }
  bool operator==(const Rect&) const = default;
};

struct RawTokenFeatures {
  double font_size_px = 16.0;
  int font_weight = 400;
  std::array<int, 4> color_rgba = {0, 0, 0, 255};
  Rect element_bbox;
  Rect token_bbox;
  bool is_image = false;
  bool is_anchor = false;
  bool preceded_by_linebreak = false;
  bool preceded_by_ws = false;
  bool is_clipped = false;
  bool is_visible = true;
};

struct EntitySpan {
  Task task = Task::Price;
  int start = 0;
  int end = 0;  // inclusive

  bool operator==(const EntitySpan&) const = default;
};

struct PageRecord {
  std::string page_id;
  std::string language;
  std::vector<std::string> tokens;
  std::vector<FeatureVector> features;
  std::vector<EntitySpan> spans;
  std::optional<std::string> source_url;

  std::size_t size() const { return tokens.size(); }
  bool operator==(const PageRecord&) const = default;
};

class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised by read_records; what() carries the file path and line number.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& message, std::size_t line)
      : std::runtime_error(message), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Every invariant violation of a raw feature set, empty when valid.
std::vector<std::string> validate_raw(const RawTokenFeatures& raw);

// Integerizes one token's features. Throws ValidationError naming the first
// out-of-range field.
FeatureVector quantize_features(const RawTokenFeatures& raw);

// Inverse of quantize_features up to bucket midpoints.
RawTokenFeatures dequantize_midpoint(const FeatureVector& features);

std::vector<std::string> validate_feature_vector(const FeatureVector& features,
                                                 std::string_view prefix);
std::vector<std::string> validate_record(const PageRecord& record);

// Sorts spans by (task, start), the canonical storage order.
void sort_spans(std::vector<EntitySpan>& spans);
std::vector<EntitySpan> spans_for_task(std::span<const EntitySpan> spans, Task task);

// One-line JSON encoding of a record (no trailing newline).
std::string serialize_record(const PageRecord& record);
// Throws ValidationError naming the offending field.
PageRecord parse_record(std::string_view line);

void write_records(std::span<const PageRecord> records, const std::filesystem::path& path);
std::vector<PageRecord> read_records(const std::filesystem::path& path);

}  // namespace heed
