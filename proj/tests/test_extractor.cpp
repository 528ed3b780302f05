#include <doctest.h>

#include "heed/extractor.hpp"

using namespace heed;

namespace {

PageRecord ex(std::string_view html) { return extract_record(html, 1280, "t", "en"); }

}  // namespace

TEST_CASE("bold run") {
  const PageRecord r = ex(R"(<div style="font-size:16px"><b>Hello world</b></div>)");
  REQUIRE(r.tokens == std::vector<std::string>{"Hello", "world"});
  CHECK(r.features[0][fidx::kFontWeight] == 7);
  CHECK(r.features[1][fidx::kFontWeight] == 7);
  CHECK(r.features[0][fidx::kLineBreak] == 1);
  CHECK(r.features[1][fidx::kWhitespace] == 1);
  CHECK(r.features[1][fidx::kLineBreak] == 0);
  // shared element box, distinct token boxes
  for (std::size_t k = 0; k < 4; ++k)
    CHECK(r.features[0][fidx::kElementBox + k] == r.features[1][fidx::kElementBox + k]);
  CHECK(r.features[0][fidx::kTokenBox] != r.features[1][fidx::kTokenBox]);
  CHECK(r.spans.empty());
}

TEST_CASE("image token") {
  const PageRecord r = ex(R"(<img src="http://x/a.png">)");
  REQUIRE(r.tokens == std::vector<std::string>{"http://x/a.png"});
  CHECK(r.features[0][fidx::kIsImage] == 1);
}

TEST_CASE("anchor tokens") {
  const PageRecord r = ex(R"(<a href="u">buy now</a> later)");
  REQUIRE(r.size() == 3);
  CHECK(r.features[0][fidx::kIsAnchor] == 1);
  CHECK(r.features[1][fidx::kIsAnchor] == 1);
  CHECK(r.features[2][fidx::kIsAnchor] == 0);
}

TEST_CASE("whitespace and line-break flags") {
  const PageRecord r = ex("<p>a<b>b</b> c</p><p>d<br>e</p>");
  REQUIRE(r.tokens == std::vector<std::string>{"a", "b", "c", "d", "e"});
  const auto flags = [&](std::size_t i) {
    return std::pair{r.features[i][fidx::kLineBreak], r.features[i][fidx::kWhitespace]};
  };
  CHECK(flags(0) == std::pair{1, 0});
  CHECK(flags(1) == std::pair{0, 0});
  CHECK(flags(2) == std::pair{0, 1});
  CHECK(flags(3) == std::pair{1, 0});
  CHECK(flags(4) == std::pair{1, 0});
}

TEST_CASE("search boxes are skipped") {
  const PageRecord r = ex(R"(<form><input placeholder="Search"><textarea>t</textarea></form>ok)");
  CHECK(r.tokens == std::vector<std::string>{"ok"});
}

TEST_CASE("extraction is pure") {
  const char* html = R"(<div><h1>Name</h1><span style="color:red">$5</span></div>)";
  CHECK(serialize_record(ex(html)) == serialize_record(ex(html)));
  const PageRecord r = ex(html);
  CHECK(r.features[1][fidx::kColor] == 255);
  CHECK(r.features[1][fidx::kColor + 1] == 0);
  CHECK(validate_record(r).empty());
}

TEST_CASE("parse errors propagate") { CHECK_THROWS_AS(ex("<a href=\"x"), html::ParseError); }
