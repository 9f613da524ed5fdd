#include <cmath>
#include <cstring>
#include <random>

#include "cate/dataset.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace cate;

namespace {

SchemaConfig schema(RoleMap roles) {
  SchemaConfig s;
  s.roles = std::move(roles);
  return s;
}

Dataset x1_x2_table() {
  std::vector<std::string> names{"x2_a", "x1_b", "x2_b", "x1_a"};
  std::vector<std::vector<double>> cols(4, std::vector<double>(3));
  for (std::size_t c = 0; c < 4; ++c) {
    for (std::size_t r = 0; r < 3; ++r) cols[c][r] = static_cast<double>(10 * c + r);
  }
  return Dataset(names, cols, {{Role::X1, {"x1_a", "x1_b"}}, {Role::X2, {"x2_a", "x2_b"}}});
}

}  // namespace

TEST_CASE("load_dataset reads a small file") {
  testutil::TempDir dir("ds");
  testutil::write_text(dir / "t.csv", "x1_a,a,y\n0.5,1,2\n-1,0,3.25\n2e-3,1,-4\n");
  auto d = load_dataset(dir / "t.csv",
                        schema({{Role::X1, {"x1_a"}}, {Role::Treatment, {"a"}}, {Role::Outcome, {"y"}}}));
  CHECK(d.n_rows() == 3);
  CHECK(d.column("x1_a")[2] == 2e-3);
  CHECK(d.role_column(Role::Outcome)[1] == 3.25);
  CHECK(d.role_columns(Role::X1) == std::vector<std::string>{"x1_a"});
}

TEST_CASE("load_dataset tolerates CRLF and a BOM") {
  testutil::TempDir dir("ds");
  testutil::write_text(dir / "t.csv", "\xEF\xBB\xBFx,a\r\n1,0\r\n2,1\r\n");
  auto d = load_dataset(dir / "t.csv", schema({{Role::X1, {"x"}}, {Role::Treatment, {"a"}}}));
  CHECK(d.n_rows() == 2);
  CHECK(d.column("a")[1] == 1.0);
}

TEST_CASE("load_dataset errors") {
  testutil::TempDir dir("ds");
  const auto roles = schema({{Role::X1, {"x"}}, {Role::Treatment, {"a"}}});

  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_dataset(dir / "nope.csv", roles), DataError);
  }
  SUBCASE("missing column") {
    testutil::write_text(dir / "t.csv", "x,b\n1,0\n");
    CHECK_THROWS_WITH_AS(load_dataset(dir / "t.csv", roles), doctest::Contains("missing column 'a'"),
                         DataError);
  }
  SUBCASE("non-numeric cell") {
    testutil::write_text(dir / "t.csv", "x,a\n1,0\nfoo,1\n");
    CHECK_THROWS_WITH_AS(load_dataset(dir / "t.csv", roles), doctest::Contains("line 3"), DataError);
  }
  SUBCASE("empty cell") {
    testutil::write_text(dir / "t.csv", "x,a\n1,\n");
    CHECK_THROWS_AS(load_dataset(dir / "t.csv", roles), DataError);
  }
  SUBCASE("treatment value 2") {
    testutil::write_text(dir / "t.csv", "x,a\n1,0\n2,2\n");
    CHECK_THROWS_WITH_AS(load_dataset(dir / "t.csv", roles),
                         doctest::Contains("treatment not binary"), DataError);
  }
  SUBCASE("selection value outside 0/1") {
    testutil::write_text(dir / "t.csv", "x,s\n1,0.5\n");
    CHECK_THROWS_WITH_AS(load_dataset(dir / "t.csv", schema({{Role::X1, {"x"}}, {Role::Selection, {"s"}}})),
                         doctest::Contains("selection not binary"), DataError);
  }
  SUBCASE("nonpositive weight") {
    testutil::write_text(dir / "t.csv", "x,w\n1,1\n2,0\n");
    CHECK_THROWS_WITH_AS(load_dataset(dir / "t.csv", schema({{Role::X1, {"x"}}, {Role::Weight, {"w"}}})),
                         doctest::Contains("nonpositive weight"), DataError);
  }
  SUBCASE("ragged row") {
    testutil::write_text(dir / "t.csv", "x,a\n1,0,7\n");
    CHECK_THROWS_AS(load_dataset(dir / "t.csv", roles), DataError);
  }
}

TEST_CASE("dataset invariants") {
  CHECK_THROWS_AS(Dataset({"a", "a"}, {{1.0}, {2.0}}, {}), DataError);
  CHECK_THROWS_AS(Dataset({"a", "b"}, {{1.0}, {2.0, 3.0}}, {}), DataError);
  CHECK_THROWS_AS(Dataset({"a", "b"}, {{1.0}, {2.0}}, {{Role::X1, {"a"}}, {Role::X2, {"a"}}}),
                  DataError);
  CHECK_THROWS_AS(Dataset({"a", "b"}, {{1.0}, {0.0}}, {{Role::Outcome, {"a", "b"}}}), DataError);
  CHECK_THROWS_AS(Dataset({"a"}, {{NAN}}, {}), DataError);
  CHECK_THROWS_AS(Dataset({"a"}, {{1.0}}, {{Role::X1, {"zzz"}}}), DataError);
}

TEST_CASE("write_dataset on an empty table writes only the header") {
  testutil::TempDir dir("ds");
  Dataset d({"x", "y"}, {{}, {}}, {});
  write_dataset(d, dir / "e.csv");
  CHECK(testutil::read_text(dir / "e.csv") == "x,y\n");
  auto back = load_dataset(dir / "e.csv", {});
  CHECK(back.n_rows() == 0);
}

TEST_CASE("0.1 survives a round trip") {
  testutil::TempDir dir("ds");
  Dataset d({"x"}, {{0.1}}, {});
  write_dataset(d, dir / "t.csv");
  CHECK(load_dataset(dir / "t.csv", {}).column("x")[0] == 0.1);
}

TEST_CASE("randomized 100x10 table round-trips bit-exactly") {
  testutil::TempDir dir("ds");
  std::mt19937_64 rng(20240601);
  std::normal_distribution<double> normal;
  std::uniform_int_distribution<int> expo(-300, 300);
  std::vector<std::string> names;
  std::vector<std::vector<double>> cols(10, std::vector<double>(100));
  for (std::size_t c = 0; c < 10; ++c) {
    names.push_back("c" + std::to_string(c));
    for (auto& v : cols[c]) v = c < 5 ? normal(rng) : std::ldexp(normal(rng), expo(rng) / 10);
  }
  cols[3][7] = 5e-324;  // smallest subnormal
  cols[4][9] = -0.0;
  cols[5][0] = 1.7976931348623157e308;
  Dataset d(names, cols, {});
  write_dataset(d, dir / "r.csv");
  Dataset back = load_dataset(dir / "r.csv", {});
  REQUIRE(back.n_rows() == 100);
  for (std::size_t c = 0; c < 10; ++c) {
    for (std::size_t r = 0; r < 100; ++r) {
      const double a = d.column(c)[r];
      const double b = back.column(c)[r];
      CHECK(std::memcmp(&a, &b, sizeof a) == 0);
    }
  }
  CHECK(back == d);
}

TEST_CASE("select_columns orders X1 before X2 in schema order") {
  const Dataset d = x1_x2_table();
  const Matrix m1 = select_columns(d, {Role::X1});
  CHECK(m1.cols() == 2);
  CHECK(m1(0, 0) == 30.0);  // x1_a comes first in the schema
  CHECK(m1(0, 1) == 10.0);

  const Matrix m12 = select_columns(d, {Role::X2, Role::X1});
  REQUIRE(m12.cols() == 4);
  CHECK(m12(1, 0) == 31.0);
  CHECK(m12(1, 1) == 11.0);
  CHECK(m12(1, 2) == 1.0);
  CHECK(m12(1, 3) == 21.0);
  const std::vector<Role> roles{Role::X1, Role::X2};
  CHECK(selected_names(d, roles) == std::vector<std::string>{"x1_a", "x1_b", "x2_a", "x2_b"});
  CHECK(select_columns(d, {Role::X1, Role::X2}) == m12);
}

TEST_CASE("select_columns with 2 X1 and 10 X2 columns") {
  std::vector<std::string> names;
  std::vector<std::vector<double>> cols;
  RoleMap roles;
  for (int j = 0; j < 12; ++j) {
    names.push_back("c" + std::to_string(j));
    cols.push_back({static_cast<double>(j)});
    roles[j < 2 ? Role::X1 : Role::X2].push_back(names.back());
  }
  Dataset d(names, cols, roles);
  CHECK(select_columns(d, {Role::X1}).cols() == 2);
  const Matrix m = select_columns(d, {Role::X1, Role::X2});
  CHECK(m.cols() == 12);
  CHECK(m(0, 0) == 0.0);
  CHECK(m(0, 11) == 11.0);
}

TEST_CASE("select_columns rejects unpopulated or non-feature roles") {
  const Dataset d = x1_x2_table();
  CHECK_THROWS(select_columns(d, {Role::O}));
  CHECK_THROWS(select_columns(d, {Role::Treatment}));
}

TEST_CASE("with_column and take_rows keep roles") {
  const Dataset d = x1_x2_table();
  const Dataset e = d.with_column("s", {1, 0, 1}, Role::Selection);
  CHECK(e.role_column(Role::Selection) == std::vector<double>{1, 0, 1});
  const std::vector<std::size_t> rows{2, 0};
  const Dataset t = e.take_rows(rows);
  CHECK(t.n_rows() == 2);
  CHECK(t.column("x1_a") == std::vector<double>{32, 30});
  CHECK(t.roles() == e.roles());

  const Dataset r = e.with_column("x1_a", {0, 0, 0});
  CHECK(r.roles() == e.roles());
  CHECK(r.role_columns(Role::X1) == e.role_columns(Role::X1));
}
