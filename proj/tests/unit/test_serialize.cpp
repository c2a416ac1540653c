#include <doctest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "mp2m/errors.hpp"
#include "mp2m/rng.hpp"
#include "mp2m/serialize.hpp"

using namespace mp2m;

TEST_CASE("hex floats round trip bit-exactly") {
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const double v = rng.normal() * std::pow(10.0, rng.uniform_int(-30, 30));
    CHECK(parse_double(format_hex(v)) == v);
    CHECK(parse_double(format_g(v)) == v);
  }
  CHECK(parse_double(format_hex(std::numeric_limits<double>::denorm_min())) ==
        std::numeric_limits<double>::denorm_min());
  CHECK(parse_double("-0x1p-2") == -0.25);
}

TEST_CASE("parse_double and parse_int reject junk") {
  CHECK_THROWS_AS(parse_double("1.0abc"), FormatError);
  CHECK_THROWS_AS(parse_double(""), FormatError);
  CHECK_THROWS_AS(parse_int("12x"), FormatError);
  CHECK(parse_int("-42") == -42);
}

TEST_CASE("split_ws handles tabs, commas and CR") {
  const auto f = split_ws(" 1\t2,3  4\r");
  REQUIRE(f.size() == 4);
  CHECK(f[0] == "1");
  CHECK(f[3] == "4");
}

TEST_CASE("fnv1a matches published vectors") {
  CHECK(fnv1a("") == 0xcbf29ce484222325ull);
  CHECK(fnv1a("a") == 0xaf63dc4c8601ec8cull);
  CHECK(fnv1a("foobar") == 0x85944171f73967e8ull);
}

TEST_CASE("RecordReader skips comments and reports line numbers") {
  std::istringstream in("# c\nmagic v1\n\nkey 1 2\nbad\n");
  RecordReader r(in, "thing");
  r.expect_header("magic", "v1");
  const auto f = r.expect_key("key", 2);
  CHECK(f[1] == "2");
  try {
    r.expect_key("key", 1);
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("line 5") != std::string::npos);
  }
}

TEST_CASE("RecordReader rejects wrong magic and version") {
  std::istringstream a("other v1\n");
  CHECK_THROWS_AS(RecordReader(a, "x").expect_header("magic", "v1"), FormatError);
  std::istringstream b("magic v2\n");
  CHECK_THROWS_AS(RecordReader(b, "x").expect_header("magic", "v1"), FormatError);
}

TEST_CASE("Rng state serialization resumes the stream") {
  Rng a(11);
  for (int i = 0; i < 5; ++i) a.normal();
  Rng b = Rng::deserialize(a.serialize());
  CHECK(a == b);
  for (int i = 0; i < 10; ++i) CHECK(a.normal() == b.normal());
}

TEST_CASE("Rng streams are keyed") {
  Rng a = Rng::stream(1, {2, 3});
  Rng b = Rng::stream(1, {2, 3});
  Rng c = Rng::stream(1, {3, 2});
  const double va = a.normal();
  CHECK(va == b.normal());
  CHECK(va != c.normal());
}
