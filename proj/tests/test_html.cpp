#include <doctest.h>

#include "heed/html.hpp"

using namespace heed::html;

namespace {

const DomNode& only_child(const DomNode& n) {
  REQUIRE(n.children.size() == 1);
  return n.children[0];
}

}  // namespace

TEST_CASE("simple element with text") {
  const DomNode doc = parse_html("<div>hi</div>");
  const DomNode& div = only_child(doc);
  CHECK(div.tag == "div");
  const DomNode& t = only_child(div);
  CHECK(t.is_text());
  CHECK(t.text == "hi");
}

TEST_CASE("p auto-closes on a following p") {
  const DomNode doc = parse_html("<p>a<p>b");
  REQUIRE(doc.children.size() == 2);
  CHECK(doc.children[0].tag == "p");
  CHECK(doc.children[1].tag == "p");
  CHECK(only_child(doc.children[0]).text == "a");
  CHECK(only_child(doc.children[1]).text == "b");
}

TEST_CASE("p closes before a block but not inside a button scope") {
  const DomNode doc = parse_html("<p>x<div>y</div>");
  REQUIRE(doc.children.size() == 2);
  CHECK(doc.children[1].tag == "div");

  const DomNode nested = parse_html("<ul><li>a<li>b</ul>");
  CHECK(only_child(nested).children.size() == 2);
}

TEST_CASE("script content is not page content") {
  const DomNode doc = parse_html("<script>x</script><span>y</span>");
  REQUIRE(doc.children.size() == 2);
  CHECK(doc.children[0].non_content);
  CHECK(!doc.children[1].non_content);
  CHECK(content_text(doc) == "y");
  CHECK(only_child(doc.children[0]).text == "x");
}

TEST_CASE("raw text elements keep markup-like content") {
  const DomNode doc = parse_html("<script>if (a<b) { x = '</div>'; }</script><b>k</b>");
  CHECK(only_child(doc.children[0]).text == "if (a<b) { x = '</div>'; }");
}

TEST_CASE("attributes preserved verbatim and style parsed") {
  const DomNode doc = parse_html(
      R"(<a HREF="/x?a=1&amp;b=2" data-k='v' style="font-size:2em; color:#f00; overflow:hidden">t</a>)");
  const DomNode& a = only_child(doc);
  REQUIRE(a.attr("href"));
  CHECK(*a.attr("href") == "/x?a=1&b=2");
  CHECK(*a.attr("data-k") == "v");
  REQUIRE(a.style.font_size);
  CHECK(a.style.font_size->value == 2.0);
  CHECK(a.style.font_size->unit == CssLength::Unit::Em);
  CHECK(*a.style.color == std::array<int, 4>{255, 0, 0, 255});
  CHECK(*a.style.overflow_hidden);
}

TEST_CASE("css colors") {
  CHECK(*parse_css_color("#0F1111") == std::array<int, 4>{15, 17, 17, 255});
  CHECK(*parse_css_color("rgba(1, 2, 3, 0.5)") == std::array<int, 4>{1, 2, 3, 128});
  CHECK(*parse_css_color("white") == std::array<int, 4>{255, 255, 255, 255});
  CHECK(!parse_css_color("#12"));
}

TEST_CASE("entities decode") {
  CHECK(decode_entities("a&amp;b &lt;&#65;&#x42;&nbsp;c") == "a&b <AB c");
  CHECK(decode_entities("&bogus;") == "&bogus;");
}

TEST_CASE("permissive recovery") {
  CHECK_NOTHROW(parse_html("<div><span>x</div></b></span>"));
  CHECK_NOTHROW(parse_html("<html><body><p>unterminated"));
  const DomNode doc = parse_html("<!DOCTYPE html><!-- c --><i>a</i>");
  CHECK(only_child(doc).tag == "i");
}

TEST_CASE("truncated input reports a byte offset") {
  try {
    parse_html("<div class=\"x");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.offset() <= 13);
    CHECK(std::string(e.what()).find("at byte") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_html("<p>a</p><!-- open"), ParseError);
  CHECK_THROWS_AS(parse_html("<img src=x"), ParseError);
}

TEST_CASE("serialize then parse preserves the tree") {
  const char* src =
      R"(<div class="a"><p>x &amp; y</p><img src="u v.png" width="10"><br><a href="q">z</a></div>)";
  const DomNode doc = parse_html(src);
  CHECK(parse_html(serialize_html(doc)) == doc);
}
