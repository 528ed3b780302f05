#pragma once

// Zero-shot completion-model baseline: chunk a page, prompt for entity
// positions, parse the reply, map positions back to the page, score.

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "heed/core.hpp"
#include "heed/evalkit.hpp"

namespace heed::llm {

inline constexpr std::size_t kTextChunk = 1024;
inline constexpr std::size_t kHypertextChunk = 128;

std::size_t chunk_size(bool with_hypertext);

// Positions in the prompt are 0-based indices of the whitespace-joined
// tokens, with inclusive ends. Throws std::invalid_argument for an empty or
// over-length chunk.
std::string build_prompt(const PageRecord& chunk, Task task, bool with_hypertext);

struct ParsedSpans {
  std::vector<std::pair<int, int>> spans;
  std::size_t dropped = 0;  // groups that were not a valid (start, end) pair
  bool failed = false;      // nothing list-like in the reply
};

// Accepts (a,b) or [a,b] pairs with any spacing, inside or outside an outer
// list, with arbitrary text around them.
ParsedSpans parse_llm_spans(std::string_view completion);

// Thrown by clients. Transient errors are retried.
class ClientError : public std::runtime_error {
 public:
  ClientError(const std::string& what, bool transient) : std::runtime_error(what), transient_(transient) {}
  bool transient() const { return transient_; }

 private:
  bool transient_;
};

class CompletionClient {
 public:
  virtual ~CompletionClient() = default;
  virtual std::string send(const std::string& prompt) = 0;
  // Requests run_baseline may have in flight at once.
  virtual int max_in_flight() const { return 4; }
};

struct HttpClientConfig {
  std::string endpoint;  // e.g. https://host/v1/chat/completions
  std::string model = "gpt-3.5-turbo";
  std::string api_key_env = "LLM_API_KEY";
  std::chrono::milliseconds timeout{60000};
  int max_retries = 3;
  std::chrono::milliseconds backoff{500};  // doubled after each retry
  int max_in_flight = 4;

  // endpoint from LLM_ENDPOINT. Throws std::invalid_argument when unset.
  static HttpClientConfig from_env();
};

// OpenAI-style chat completions over HTTP(S). The API key is read from the
// environment at construction and never logged.
class HttpCompletionClient : public CompletionClient {
 public:
  explicit HttpCompletionClient(HttpClientConfig config);
  std::string send(const std::string& prompt) override;
  int max_in_flight() const override { return config_.max_in_flight; }

 private:
  std::string attempt(const std::string& body);

  HttpClientConfig config_;
  std::string origin_;
  std::string path_;
  std::string api_key_;
};

// Answers from a prompt -> completion table; unknown prompts get "[]".
class MockClient : public CompletionClient {
 public:
  explicit MockClient(std::map<std::string, std::string> answers) : answers_(std::move(answers)) {}
  std::string send(const std::string& prompt) override;

 private:
  std::map<std::string, std::string> answers_;
};

// Replies with the gold spans of every chunk it will be asked about.
MockClient make_oracle_client(std::span<const PageRecord> records, std::span<const Task> tasks,
                              bool with_hypertext);
// Always replies "[]".
MockClient make_empty_client();

struct BaselineResult {
  EvalReport report;
  std::size_t requests = 0;
  std::size_t failed_requests = 0;
  std::size_t unparsable = 0;
  std::size_t dropped_pairs = 0;
  std::size_t out_of_range = 0;
};

// One transcript line (JSON) per request, in (page, task, chunk) order.
BaselineResult run_baseline(std::span<const PageRecord> records, CompletionClient& client,
                            std::span<const Task> tasks, bool with_hypertext,
                            const std::filesystem::path& transcript);

}  // namespace heed::llm
