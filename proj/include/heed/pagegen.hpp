#pragma once

// Deterministic synthetic e-commerce pages with gold Price/Name/Image spans.

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "heed/core.hpp"

namespace heed {

struct GenConfig {
  std::uint64_t seed = 42;
  std::size_t n_pages = 1000;
  // language tag -> weight; weights must sum to 1.
  std::vector<std::pair<std::string, double>> language_mix = default_language_mix();
  // Target token counts are drawn around length_mean with most mass in
  // [length_min, length_max].
  double length_mean = 750;
  double length_min = 400;
  double length_max = 1000;
  // Probability that a page's product block (and so its entities) starts
  // inside the first 200 tokens.
  double entity_position_bias = 0.88;
  double viewport_width = 1280;

  // Page-count weights of the nine corpus languages.
  static std::vector<std::pair<std::string, double>> default_language_mix();
  // Scales length_min/length_max with the default 400/750/1000 proportions.
  void set_length_mean(double mean);
  // Throws std::invalid_argument describing the first violated invariant.
  void validate() const;
};

struct GeneratedPage {
  std::string html;
  PageRecord gold;
  // Surface strings of the gold entities, in span order (test aid).
  std::vector<std::string> entity_text;
};

inline constexpr std::size_t kEarlyEntityWindow = 200;

GeneratedPage generate_page(std::uint64_t seed, std::size_t page_index, const GenConfig& config);

struct CorpusSplits {
  std::vector<PageRecord> train;
  std::vector<PageRecord> dev;
  std::vector<PageRecord> test;
};

struct SplitSizes {
  std::size_t train = 0;
  std::size_t dev = 0;
  std::size_t test = 0;
};
// 80/10/10 with dev and test rounded down.
SplitSizes split_sizes(std::size_t n_pages);

// Page indices assigned to each split (seeded shuffle).
struct SplitAssignment {
  std::vector<std::size_t> train;
  std::vector<std::size_t> dev;
  std::vector<std::size_t> test;
};
SplitAssignment assign_splits(std::size_t n_pages, std::uint64_t seed);

// In-memory corpus (no files).
CorpusSplits generate_splits(const GenConfig& config);

struct CorpusManifest {
  std::uint64_t seed = 0;
  std::size_t n_pages = 0;
  std::vector<std::string> train_ids;
  std::vector<std::string> dev_ids;
  std::vector<std::string> test_ids;
  std::string hash;  // FNV-1a of the manifest body, hex

  std::string to_json() const;
};

// Writes train.jsonl, dev.jsonl, test.jsonl, html/<page_id>.html and
// manifest.json under out_dir. With n_pages == 0 nothing is written.
CorpusManifest generate_corpus(const GenConfig& config, const std::filesystem::path& out_dir);

std::string fnv1a_hex(std::string_view data);

}  // namespace heed
