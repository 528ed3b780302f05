#include <doctest.h>

#include <atomic>
#include <cstdlib>
#include <fstream>
#include <regex>
#include <thread>

#include "heed/llm_baseline.hpp"
#include "heed/pagegen.hpp"
#include "heed/trainer.hpp"
#include "support.hpp"

// After Eigen: resolv.h (pulled in by httplib) defines a _res macro.
#include <httplib.h>
#include <json.hpp>

using namespace heed;
using namespace heed::llm;

namespace {

std::vector<PageRecord> pages(std::size_t n, std::uint64_t seed, double length_mean) {
  GenConfig gc;
  gc.seed = seed;
  gc.n_pages = n;
  gc.set_length_mean(length_mean);
  std::vector<PageRecord> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(generate_page(seed, i, gc).gold);
  return out;
}

PageRecord tiny_record() {
  PageRecord r;
  r.page_id = "p0";
  r.language = "en";
  r.tokens = {"Blue", "Mug", "$", "12.99"};
  for (std::size_t i = 0; i < r.tokens.size(); ++i) {
    FeatureVector f{};
    f[fidx::kFontSize] = static_cast<int>(16 + i);
    f[fidx::kVisible] = 1;
    r.features.push_back(f);
  }
  r.spans = {{Task::Price, 2, 3}, {Task::Name, 0, 1}};
  return r;
}

// Independent reference: a regex for well-formed non-negative pairs, applied
// to the whole reply.
std::vector<std::pair<int, int>> regex_pairs(const std::string& s) {
  static const std::regex pair_re(R"([\(\[]\s*(\d+)\s*,\s*(\d+)\s*[\)\]])");
  std::vector<std::pair<int, int>> out;
  for (auto it = std::sregex_iterator(s.begin(), s.end(), pair_re); it != std::sregex_iterator(); ++it) {
    const int a = std::stoi((*it)[1]);
    const int b = std::stoi((*it)[2]);
    if (a <= b) out.emplace_back(a, b);
  }
  return out;
}

struct Fixture {
  std::string reply;
  std::size_t dropped;
  bool failed;
};

const std::vector<Fixture> kFixtures = {
    {"Sure! [(3,4)]", 0, false},
    {"[(1,2), (5,6)]]", 0, false},
    {"[ ( 1 , 2 ) ,( 5,6 ) ]", 0, false},
    {"[[1,2],[5,6]]", 0, false},
    {"(1,2), (5,6)", 0, false},
    {"```python\n[(10, 12)]\n```", 0, false},
    {"The spans are: [(0,0)]. Hope this helps!", 0, false},
    {"[(1,2),(3,4),]", 0, false},
    {"[(1,2)(5,6)]", 0, false},
    {"[(1, 2); (5, 6)]", 0, false},
    {"{(7,9)}", 0, false},
    {"[(5,2)]", 1, false},
    {"[(a,b), (1,1)]", 1, false},
    {"[(1,2,3)]", 1, false},
    {"[(-1,2)]", 1, false},
    {"[(1.0,2.0)]", 1, false},
    {"[(1 2)]", 1, false},
    {"[(1,2), (5,6", 1, false},
    {"None of the tokens are prices.", 0, true},
    {"", 0, true},
};

class ThrowingClient : public CompletionClient {
 public:
  std::string send(const std::string&) override { throw ClientError("quota exhausted", false); }
};

// Replies out of order: later prompts finish first.
class SlowFirstClient : public CompletionClient {
 public:
  explicit SlowFirstClient(MockClient inner) : inner_(std::move(inner)) {}
  std::string send(const std::string& prompt) override {
    const int n = calls_++;
    if (n < 2) std::this_thread::sleep_for(std::chrono::milliseconds(20));
    return inner_.send(prompt);
  }

 private:
  MockClient inner_;
  std::atomic<int> calls_{0};
};

std::size_t count_lines(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) n += !line.empty();
  return n;
}

}  // namespace

TEST_CASE("prompt templates") {
  const PageRecord r = tiny_record();
  const std::string text = build_prompt(r, Task::Price, false);
  CHECK(text.rfind("Given the text of a web page: Blue Mug $ 12.99, please extract all entities of type Price.", 0) == 0);
  CHECK(text.find("like [(1,2), (5,6)]]") != std::string::npos);
  CHECK(text.find("HTML features") == std::string::npos);

  const std::string hyper = build_prompt(r, Task::Image, true);
  CHECK(hyper.find("where each token corresponds to HTML features [[16,0,") != std::string::npos);
  CHECK(hyper.find("extract all entities of type Image") != std::string::npos);
  // One 20-int vector per token.
  const auto open = hyper.find("features [") + 9;
  const auto close = hyper.find("]]", open);
  const std::string feats = hyper.substr(open, close - open + 2);
  CHECK(std::count(feats.begin(), feats.end(), '[') == 1 + 4);
  CHECK(std::count(feats.begin(), feats.end(), ',') == 4 * 19 + 3);

  PageRecord empty = r;
  empty.tokens.clear();
  empty.features.clear();
  CHECK_THROWS_AS(build_prompt(empty, Task::Price, false), std::invalid_argument);
}

TEST_CASE("prompt length limits") {
  PageRecord r = pages(1, 3, 400).front();
  REQUIRE(r.size() > kHypertextChunk);
  CHECK_THROWS_AS(build_prompt(r, Task::Name, true), std::invalid_argument);
  CHECK_NOTHROW(build_prompt(chunk_record(r, kHypertextChunk)[0].record, Task::Name, true));
  if (r.size() <= kTextChunk) CHECK_NOTHROW(build_prompt(r, Task::Name, false));
}

TEST_CASE("parse_llm_spans basic forms") {
  CHECK(parse_llm_spans("[(1,2), (5,6)]").spans == std::vector<std::pair<int, int>>{{1, 2}, {5, 6}});
  const ParsedSpans empty = parse_llm_spans("[]");
  CHECK(empty.spans.empty());
  CHECK(!empty.failed);
  CHECK(parse_llm_spans("Sure! [(3,4)]").spans == std::vector<std::pair<int, int>>{{3, 4}});
}

TEST_CASE("parse_llm_spans agrees with the regex reference on malformed replies") {
  REQUIRE(kFixtures.size() == 20);
  for (const Fixture& f : kFixtures) {
    CAPTURE(f.reply);
    const ParsedSpans got = parse_llm_spans(f.reply);
    CHECK(got.spans == regex_pairs(f.reply));
    CHECK(got.dropped == f.dropped);
    CHECK(got.failed == f.failed);
  }
}

TEST_CASE("oracle client scores 100, empty client recalls nothing") {
  const auto recs = pages(6, 8, 300);
  const std::vector<Task> tasks(kAllTasks.begin(), kAllTasks.end());
  const auto dir = heed::testing::temp_dir("llm");
  for (bool hyper : {false, true}) {
    CAPTURE(hyper);
    MockClient oracle = make_oracle_client(recs, tasks, hyper);
    const BaselineResult good = run_baseline(recs, oracle, tasks, hyper, dir / "oracle.jsonl");
    const Prf all = prf(good.report.micro());
    CHECK(all.p == 100);
    CHECK(all.r == 100);
    CHECK(all.f1 == 100);
    CHECK(!good.report.incomplete);
    std::size_t chunks = 0;
    for (const auto& r : recs) chunks += chunk_record(r, chunk_size(hyper)).size();
    CHECK(good.requests == chunks * tasks.size());
    CHECK(count_lines(dir / "oracle.jsonl") == good.requests);

    MockClient none = make_empty_client();
    const BaselineResult bad = run_baseline(recs, none, tasks, hyper, dir / "empty.jsonl");
    CHECK(bad.report.micro().tp == 0);
    CHECK(prf(bad.report.micro()).r == 0);
    CHECK(bad.report.micro().fn == good.report.micro().tp);
  }
}

TEST_CASE("transcript has one line per chunk in chunk order") {
  const auto recs = pages(2, 5, 300);
  const std::vector<Task> one = {Task::Price};
  SlowFirstClient client(make_oracle_client(recs, one, true));
  const auto path = heed::testing::temp_dir("llm_order") / "t.jsonl";
  const BaselineResult res = run_baseline(recs, client, one, true, path);
  std::size_t chunks = 0;
  for (const auto& r : recs) chunks += chunk_record(r, kHypertextChunk).size();
  REQUIRE(count_lines(path) == chunks);
  CHECK(prf(res.report.micro()).f1 == 100);

  std::ifstream in(path);
  std::size_t i = 0;
  std::string prev_page;
  std::size_t prev_offset = 0;
  for (std::string line; std::getline(in, line); ++i) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j["index"] == i);
    CHECK(j.contains("completion"));
    const std::string page = j["page_id"];
    const std::size_t offset = j["offset"];
    if (page == prev_page) CHECK(offset > prev_offset);
    prev_page = page;
    prev_offset = offset;
  }
}

TEST_CASE("out-of-range positions are dropped at scoring time") {
  const PageRecord r = tiny_record();
  const std::vector<Task> one = {Task::Price};
  MockClient client({{build_prompt(r, Task::Price, false), "[(2,3), (3,9)]"}});
  const BaselineResult res = run_baseline(std::span(&r, 1), client, one, false, {});
  CHECK(res.out_of_range == 1);
  CHECK(res.report.micro() == Counts{1, 0, 0});
}

TEST_CASE("client failures give a partial report flagged incomplete") {
  const auto recs = pages(2, 1, 100);
  const std::vector<Task> one = {Task::Name};
  ThrowingClient client;
  const auto path = heed::testing::temp_dir("llm_fail") / "t.jsonl";
  const BaselineResult res = run_baseline(recs, client, one, false, path);
  CHECK(res.report.incomplete);
  CHECK(res.failed_requests == res.requests);
  CHECK(count_lines(path) == res.requests);
  CHECK(res.report.micro().tp == 0);
}

TEST_CASE("http client retries transient failures and sends the key") {
  httplib::Server svr;
  std::atomic<int> hits{0};
  std::string auth;
  std::string model;
  svr.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    if (++hits <= 2) {
      res.status = 503;
      return;
    }
    auth = req.get_header_value("Authorization");
    const auto body = nlohmann::json::parse(req.body);
    model = body["model"];
    nlohmann::json reply;
    reply["choices"] = nlohmann::json::array({{{"message", {{"role", "assistant"}, {"content", "[(0,1)]"}}}}});
    res.set_content(reply.dump(), "application/json");
  });
  svr.Post("/bad", [](const httplib::Request&, httplib::Response& res) { res.status = 400; });
  std::atomic<int> down_hits{0};
  svr.Post("/down", [&](const httplib::Request&, httplib::Response& res) {
    ++down_hits;
    res.status = 502;
  });
  const int port = svr.bind_to_any_port("127.0.0.1");
  std::thread th([&] { svr.listen_after_bind(); });
  svr.wait_until_ready();

  ::setenv("HEED_TEST_LLM_KEY", "sk-test", 1);
  HttpClientConfig cfg;
  cfg.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
  cfg.api_key_env = "HEED_TEST_LLM_KEY";
  cfg.backoff = std::chrono::milliseconds(1);
  cfg.timeout = std::chrono::milliseconds(5000);
  HttpCompletionClient client(cfg);
  CHECK(client.send("hello") == "[(0,1)]");
  CHECK(hits == 3);
  CHECK(auth == "Bearer sk-test");
  CHECK(model == "gpt-3.5-turbo");

  cfg.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/bad";
  HttpCompletionClient bad(cfg);
  try {
    bad.send("x");
    FAIL("expected ClientError");
  } catch (const ClientError& e) {
    CHECK(!e.transient());
  }

  cfg.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/down";
  HttpCompletionClient down(cfg);
  try {
    down.send("x");
    FAIL("expected ClientError");
  } catch (const ClientError& e) {
    CHECK(e.transient());
    CHECK(down_hits == 1 + cfg.max_retries);
    CHECK(std::string(e.what()).find("sk-test") == std::string::npos);
  }
  ::unsetenv("HEED_TEST_LLM_KEY");
  svr.stop();
  th.join();
}

TEST_CASE("http client config checks") {
  ::unsetenv("LLM_ENDPOINT");
  CHECK_THROWS_AS(HttpClientConfig::from_env(), std::invalid_argument);
  HttpClientConfig cfg;
  cfg.endpoint = "localhost:8080";
  CHECK_THROWS_AS(HttpCompletionClient{cfg}, std::invalid_argument);
}
