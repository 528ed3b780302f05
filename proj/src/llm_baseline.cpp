#include "heed/llm_baseline.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "heed/trainer.hpp"

namespace heed::llm {

namespace {

// Verbatim templates, including the doubled closing bracket.
constexpr std::string_view kTextPrompt =
    "Given the text of a web page: {TEXT}, please extract all entities of type {TYPE}. You need to "
    "only return the corresponding start and end positions of the spans like [(1,2), (5,6)]]. "
    "Please remember the output format and never give me any redundant information.";
constexpr std::string_view kHypertextPrompt =
    "Given the text of a web page: {TEXT}, where each token corresponds to HTML features {FEATS}. "
    "Each vector corresponds to a set of hypertext features, including font-size, bounding box, "
    "and other details. Please extract all entities of type {TYPE}, and return the corresponding "
    "start and end positions of the spans like [(1,2), (5,6)]]. Please remember the output format "
    "and never give me any redundant information.";

void replace_once(std::string& s, std::string_view key, const std::string& value) {
  const auto pos = s.find(key);
  s.replace(pos, key.size(), value);
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

bool parse_int(std::string_view s, int& out) {
  s = trim(s);
  if (s.empty()) return false;
  std::size_t i = s[0] == '-' || s[0] == '+' ? 1 : 0;
  if (i == s.size() || s.size() - i > 9) return false;
  for (std::size_t k = i; k < s.size(); ++k)
    if (!std::isdigit(static_cast<unsigned char>(s[k]))) return false;
  out = std::stoi(std::string(s));
  return true;
}

std::string format_pairs(const std::vector<EntitySpan>& spans) {
  std::string out = "[";
  for (std::size_t i = 0; i < spans.size(); ++i) {
    if (i) out += ", ";
    out += "(" + std::to_string(spans[i].start) + "," + std::to_string(spans[i].end) + ")";
  }
  return out + "]";
}

}  // namespace

std::size_t chunk_size(bool with_hypertext) { return with_hypertext ? kHypertextChunk : kTextChunk; }

std::string build_prompt(const PageRecord& chunk, Task task, bool with_hypertext) {
  if (chunk.tokens.empty()) throw std::invalid_argument("build_prompt: empty chunk");
  if (chunk.size() > chunk_size(with_hypertext))
    throw std::invalid_argument("build_prompt: chunk of " + std::to_string(chunk.size()) +
                                " tokens exceeds " + std::to_string(chunk_size(with_hypertext)));
  std::string text;
  for (std::size_t i = 0; i < chunk.tokens.size(); ++i) {
    if (i) text += ' ';
    text += chunk.tokens[i];
  }
  std::string prompt(with_hypertext ? kHypertextPrompt : kTextPrompt);
  replace_once(prompt, "{TEXT}", text);
  if (with_hypertext) {
    std::string feats = "[";
    for (std::size_t i = 0; i < chunk.features.size(); ++i) {
      if (i) feats += ", ";
      feats += "[";
      for (std::size_t j = 0; j < kFeatureCount; ++j) {
        if (j) feats += ",";
        feats += std::to_string(chunk.features[i][j]);
      }
      feats += "]";
    }
    replace_once(prompt, "{FEATS}", feats + "]");
  }
  replace_once(prompt, "{TYPE}", std::string(task_label(task)));
  return prompt;
}

ParsedSpans parse_llm_spans(std::string_view s) {
  ParsedSpans out;
  bool any_group = false;
  std::size_t i = 0;
  while (i < s.size()) {
    if (s[i] != '(' && s[i] != '[') {
      ++i;
      continue;
    }
    // Innermost group: restart at any opener seen before a closer.
    std::size_t open = i;
    std::size_t k = i + 1;
    while (k < s.size() && s[k] != ')' && s[k] != ']') {
      if (s[k] == '(' || s[k] == '[') open = k;
      ++k;
    }
    any_group = true;
    if (k == s.size()) {
      // Unterminated tail, e.g. a truncated reply.
      if (!trim(s.substr(open + 1)).empty()) ++out.dropped;
      break;
    }
    const std::string_view body = trim(s.substr(open + 1, k - open - 1));
    i = k + 1;
    if (body.empty()) continue;
    const auto comma = body.find(',');
    int a = 0, b = 0;
    if (comma == std::string_view::npos || body.find(',', comma + 1) != std::string_view::npos ||
        !parse_int(body.substr(0, comma), a) || !parse_int(body.substr(comma + 1), b) || a < 0 ||
        b < a) {
      ++out.dropped;
      continue;
    }
    out.spans.emplace_back(a, b);
  }
  out.failed = !any_group;
  return out;
}

HttpClientConfig HttpClientConfig::from_env() {
  HttpClientConfig c;
  const char* ep = std::getenv("LLM_ENDPOINT");
  if (!ep || !*ep) throw std::invalid_argument("LLM_ENDPOINT is not set");
  c.endpoint = ep;
  return c;
}

HttpCompletionClient::HttpCompletionClient(HttpClientConfig config) : config_(std::move(config)) {
  const auto scheme = config_.endpoint.find("://");
  if (scheme == std::string::npos)
    throw std::invalid_argument("endpoint must start with http:// or https://: " + config_.endpoint);
  const auto slash = config_.endpoint.find('/', scheme + 3);
  origin_ = config_.endpoint.substr(0, slash);
  path_ = slash == std::string::npos ? "/" : config_.endpoint.substr(slash);
#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
  if (config_.endpoint.rfind("https://", 0) == 0)
    throw std::invalid_argument("https endpoints need a build with OpenSSL");
#endif
  if (const char* key = std::getenv(config_.api_key_env.c_str())) api_key_ = key;
  if (config_.max_in_flight < 1) config_.max_in_flight = 1;
}

std::string HttpCompletionClient::attempt(const std::string& body) {
  httplib::Client cli(origin_);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(config_.timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(config_.timeout - secs);
  cli.set_connection_timeout(secs.count(), usecs.count());
  cli.set_read_timeout(secs.count(), usecs.count());
  httplib::Headers headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
  const auto res = cli.Post(path_, headers, body, "application/json");
  if (!res) throw ClientError("request failed: " + httplib::to_string(res.error()), true);
  if (res->status == 429 || res->status >= 500)
    throw ClientError("server returned " + std::to_string(res->status), true);
  if (res->status != 200) throw ClientError("server returned " + std::to_string(res->status), false);
  try {
    const auto j = nlohmann::json::parse(res->body);
    return j.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ClientError(std::string("malformed completion response: ") + e.what(), false);
  }
}

std::string HttpCompletionClient::send(const std::string& prompt) {
  nlohmann::json req;
  req["model"] = config_.model;
  req["temperature"] = 0;
  req["messages"] = nlohmann::json::array({{{"role", "user"}, {"content", prompt}}});
  const std::string body = req.dump();
  auto wait = config_.backoff;
  for (int retry = 0;; ++retry) {
    try {
      return attempt(body);
    } catch (const ClientError& e) {
      if (!e.transient() || retry >= config_.max_retries) throw;
      spdlog::warn("completion request failed ({}), retry {} of {}", e.what(), retry + 1,
                   config_.max_retries);
      std::this_thread::sleep_for(wait);
      wait *= 2;
    }
  }
}

std::string MockClient::send(const std::string& prompt) {
  const auto it = answers_.find(prompt);
  return it == answers_.end() ? "[]" : it->second;
}

MockClient make_oracle_client(std::span<const PageRecord> records, std::span<const Task> tasks,
                              bool with_hypertext) {
  std::map<std::string, std::string> answers;
  for (const PageRecord& r : records)
    for (Task t : tasks)
      for (const Chunk& c : chunk_record(r, chunk_size(with_hypertext)))
        if (!c.record.tokens.empty())
          answers[build_prompt(c.record, t, with_hypertext)] = format_pairs(spans_for_task(c.record.spans, t));
  return MockClient(std::move(answers));
}

MockClient make_empty_client() { return MockClient({}); }

BaselineResult run_baseline(std::span<const PageRecord> records, CompletionClient& client,
                            std::span<const Task> tasks, bool with_hypertext,
                            const std::filesystem::path& transcript) {
  struct Job {
    std::size_t record = 0;
    Task task = Task::Price;
    std::size_t chunk = 0;
    std::size_t offset = 0;
    std::size_t length = 0;
    std::string prompt;
    std::string completion;
    std::string error;
  };
  std::vector<Job> jobs;
  for (std::size_t r = 0; r < records.size(); ++r)
    for (Task t : tasks) {
      const auto chunks = chunk_record(records[r], chunk_size(with_hypertext));
      for (std::size_t c = 0; c < chunks.size(); ++c) {
        if (chunks[c].record.tokens.empty()) continue;
        jobs.push_back({r, t, c, chunks[c].offset, chunks[c].record.size(),
                        build_prompt(chunks[c].record, t, with_hypertext), {}, {}});
      }
    }

  // Bounded concurrency; each worker writes only its own job slots.
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        jobs[i].completion = client.send(jobs[i].prompt);
      } catch (const std::exception& e) {
        jobs[i].error = e.what();
      }
    }
  };
  const auto n_threads = std::min<std::size_t>(static_cast<std::size_t>(std::max(1, client.max_in_flight())), jobs.size());
  std::vector<std::thread> pool;
  for (std::size_t k = 0; k < n_threads; ++k) pool.emplace_back(worker);
  for (auto& th : pool) th.join();

  BaselineResult res;
  res.requests = jobs.size();
  if (!transcript.empty() && transcript.has_parent_path()) std::filesystem::create_directories(transcript.parent_path());
  std::ofstream log;
  if (!transcript.empty()) {
    log.open(transcript, std::ios::binary);
    if (!log) throw std::runtime_error("cannot write transcript " + transcript.string());
  }
  // (record, task) -> per-chunk spans and offsets, for re-merging.
  std::map<std::pair<std::size_t, Task>, std::pair<std::vector<std::vector<EntitySpan>>, std::vector<std::size_t>>> pieces;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    const Job& job = jobs[i];
    nlohmann::ordered_json line;
    line["index"] = i;
    line["page_id"] = records[job.record].page_id;
    line["task"] = task_name(job.task);
    line["chunk"] = job.chunk;
    line["offset"] = job.offset;
    line["prompt"] = job.prompt;
    std::vector<EntitySpan> local;
    if (!job.error.empty()) {
      ++res.failed_requests;
      line["error"] = job.error;
      spdlog::warn("request {} ({} {}) failed: {}", i, records[job.record].page_id, task_name(job.task), job.error);
    } else {
      line["completion"] = job.completion;
      const ParsedSpans parsed = parse_llm_spans(job.completion);
      res.dropped_pairs += parsed.dropped;
      res.unparsable += parsed.failed;
      for (const auto& [a, b] : parsed.spans) {
        if (static_cast<std::size_t>(b) >= job.length) {
          ++res.out_of_range;
          continue;
        }
        local.push_back({job.task, a, b});
      }
      line["parsed"] = parsed.spans;
      line["dropped"] = parsed.dropped;
      line["parse_failed"] = parsed.failed;
    }
    auto& slot = pieces[{job.record, job.task}];
    slot.first.push_back(std::move(local));
    slot.second.push_back(job.offset);
    if (log) log << line.dump() << "\n";
  }
  for (std::size_t r = 0; r < records.size(); ++r)
    for (Task t : tasks) {
      std::vector<EntitySpan> pred;
      if (const auto it = pieces.find({r, t}); it != pieces.end())
        pred = merge_chunk_spans(it->second.first, it->second.second);
      res.report.add(t, records[r].language, match_spans(pred, spans_for_task(records[r].spans, t)));
    }
  res.report.incomplete = res.failed_requests > 0;
  return res;
}

}  // namespace heed::llm
