#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cdul/error.hpp"
#include "cdul/xml.hpp"

using cdul::Error;
using cdul::xml::Node;
using cdul::xml::parse_document;

TEST_CASE("parses nested elements with text") {
    Node root = parse_document(R"(<?xml version="1.0"?>
<annotation>
  <folder>VOC2012</folder>
  <object><name>dog</name><occluded>1</occluded></object>
  <object><name>person</name></object>
</annotation>)");
    CHECK(root.name == "annotation");
    REQUIRE(root.child("folder") != nullptr);
    CHECK(root.child("folder")->trimmed_text() == "VOC2012");
    auto objects = root.children_named("object");
    REQUIRE(objects.size() == 2);
    CHECK(objects[0]->child("name")->trimmed_text() == "dog");
    CHECK(objects[0]->child("occluded")->trimmed_text() == "1");
    CHECK(objects[1]->child("name")->trimmed_text() == "person");
}

TEST_CASE("attributes, self-closing tags, comments and CDATA") {
    Node root = parse_document(
        "<root a=\"1\" b='two'>\n"
        "  <!-- a comment with <angle> brackets -->\n"
        "  <empty/>\n"
        "  <data><![CDATA[5 < 6 & 7 > 2]]></data>\n"
        "</root>");
    REQUIRE(root.attribute("a") != nullptr);
    CHECK(*root.attribute("a") == "1");
    CHECK(*root.attribute("b") == "two");
    CHECK(root.attribute("missing") == nullptr);
    CHECK(root.child("empty") != nullptr);
    CHECK(root.child("data")->trimmed_text() == "5 < 6 & 7 > 2");
}

TEST_CASE("entity references decode") {
    Node root = parse_document("<r>&amp;&lt;&gt;&quot;&apos;&#65;&#x42;</r>");
    CHECK(root.text == "&<>\"'AB");
}

TEST_CASE("malformed input reports the offending line") {
    try {
        parse_document("<annotation>\n  <object>\n    <name>dog</wrong>\n  </object>\n</annotation>");
        FAIL("expected a parse error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("line 3") != std::string::npos);
        CHECK(e.kind() == cdul::ErrorKind::data);
    }
}

TEST_CASE("rejected inputs") {
    CHECK_THROWS_AS(parse_document("<a><b></a></b>"), Error);   // mismatched nesting
    CHECK_THROWS_AS(parse_document("<a>"), Error);              // unterminated
    CHECK_THROWS_AS(parse_document("<a></a><b></b>"), Error);   // two roots
    CHECK_THROWS_AS(parse_document("plain text"), Error);
    CHECK_THROWS_AS(parse_document("<a attr></a>"), Error);     // attribute without value
    CHECK_THROWS_AS(parse_document("<a>&unknown;</a>"), Error);
}

TEST_CASE("parsing is pure: same text gives the same tree") {
    const char* text = "<a x=\"1\"><b>hello</b><b>world</b></a>";
    Node first = parse_document(text);
    Node second = parse_document(text);
    CHECK(first.name == second.name);
    REQUIRE(first.children.size() == second.children.size());
    for (size_t i = 0; i < first.children.size(); ++i)
        CHECK(first.children[i].text == second.children[i].text);
}
