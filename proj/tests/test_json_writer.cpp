#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "quantlab/json_writer.hpp"

#include <cmath>
#include <stdexcept>

#include "json.hpp"

using quantlab::JsonWriter;

TEST_CASE("objects keep insertion order") {
    JsonWriter w;
    w.begin_object()
        .kv("zebra", 1)
        .kv("alpha", 2)
        .key("nested")
        .begin_object()
        .kv("b", true)
        .kv_null("a")
        .end_object()
        .end_object();
    CHECK(w.str() == R"({"zebra":1,"alpha":2,"nested":{"b":true,"a":null}})");
}

TEST_CASE("arrays and mixed nesting") {
    JsonWriter w;
    w.begin_array();
    w.value(1).value(2.5).value("three");
    w.begin_object().kv("k", false).end_object();
    w.begin_array().end_array();
    w.end_array();
    CHECK(w.str() == R"([1,2.5,"three",{"k":false},[]])");
}

TEST_CASE("floats print with nine significant digits") {
    CHECK(JsonWriter::format_double(1.0 / 3.0) == "0.333333333");
    CHECK(JsonWriter::format_double(2.0) == "2");
    CHECK(JsonWriter::format_double(0.1f) == "0.100000001");
    CHECK(JsonWriter::format_double(1.31072e12) == "1.31072e+12");
    CHECK(JsonWriter::format_double(-0.0078431372) == "-0.0078431372");
}

TEST_CASE("non-finite numbers are rejected") {
    CHECK_THROWS_AS(JsonWriter::format_double(std::nan("")), std::invalid_argument);
    CHECK_THROWS_AS(JsonWriter::format_double(INFINITY), std::invalid_argument);
    JsonWriter w;
    w.begin_object().key("x");
    CHECK_THROWS_AS(w.value(-INFINITY), std::invalid_argument);
}

TEST_CASE("string escaping") {
    JsonWriter w;
    w.begin_object().kv("path", "a\\b\"c\n\t").end_object();
    CHECK(w.str() == "{\"path\":\"a\\\\b\\\"c\\n\\t\"}");
    CHECK(JsonWriter::escape(std::string(1, '\x01')) == "\\u0001");
}

TEST_CASE("output parses as valid JSON") {
    JsonWriter w;
    w.begin_object()
        .kv("name", "quantlab")
        .kv("pi", 3.14159265358979)
        .key("bits")
        .begin_array()
        .value(2)
        .value(4)
        .value(8)
        .end_array()
        .kv("ok", true)
        .kv_null("missing")
        .end_object();
    const auto parsed = nlohmann::json::parse(w.str());
    CHECK(parsed["name"] == "quantlab");
    CHECK(parsed["bits"].size() == 3);
    CHECK(parsed["missing"].is_null());
    CHECK(parsed["pi"].get<double>() == doctest::Approx(3.14159265).epsilon(1e-8));
}

TEST_CASE("identical construction yields identical bytes") {
    auto build = [] {
        JsonWriter w;
        w.begin_object().kv("v", 0.1 + 0.2).kv("n", 12345).end_object();
        return w.str();
    };
    CHECK(build() == build());
}

TEST_CASE("raw splices a fragment verbatim") {
    JsonWriter w;
    w.begin_object().key("section").raw(R"({"pre":"rendered"})").kv("after", 1).end_object();
    CHECK(w.str() == R"({"section":{"pre":"rendered"},"after":1})");
}

TEST_CASE("unterminated container is an error") {
    JsonWriter w;
    w.begin_object();
    CHECK_THROWS_AS(w.str(), std::logic_error);
}
