#include <catch2/catch.hpp>

#include <random>
#include <sstream>

#include "sevtest/data.hpp"
#include "testutil.hpp"

using namespace sevtest;

TEST_CASE("table CSV parses the liver basophilia example") {
  auto t = parse_table_csv(testutil::green_table_csv());
  REQUIRE(t.groups.size() == 5);
  REQUIRE(t.grades == std::vector<int>{1, 2, 3});
  REQUIRE(t.total() == 67);
  REQUIRE(t.counts[0] == std::vector<long long>{9, 4, 1});
  REQUIRE(t.counts[4] == std::vector<long long>{6, 4, 4});
}

TEST_CASE("table CSV rejects bad input") {
  CHECK_THROWS_AS(parse_table_csv("group,1,2\n"
                                  "a,0,0\n"),
                  parse_error);  // empty group
  CHECK_THROWS_AS(parse_table_csv("group,1,2\n"
                                  "a,3\n"),
                  parse_error);  // ragged
  CHECK_THROWS_AS(parse_table_csv("group,1,2\n"
                                  "a,-1,4\n"),
                  parse_error);  // negative count
  CHECK_THROWS_AS(parse_table_csv(""), parse_error);
}

TEST_CASE("2x2 table is a valid degenerate case") {
  auto t = parse_table_csv("group,0,1\n"
                           "c,3,2\n"
                           "d,1,4\n");
  auto d = expand_table(t);
  REQUIRE(d.n_subjects() == 10);
  REQUIRE(d.grade_min == 0);
  REQUIRE(d.grade_max == 1);
}

TEST_CASE("expand reproduces Table 1 subject counts") {
  auto d = testutil::green_dataset();
  REQUIRE(d.n_subjects() == 67);
  REQUIRE(d.group_sizes() == std::vector<int>{14, 12, 13, 14, 14});
  REQUIRE(d.group_labels.front() == "1");
}

TEST_CASE("1x1-style table expands to identical records") {
  auto t = parse_table_csv("group,2,3\n"
                           "only,5,0\n");
  auto d = expand_table(t);
  REQUIRE(d.n_subjects() == 5);
  for (const auto& r : d.records) REQUIRE(r.severity == 2);
  REQUIRE_FALSE(d.notes.empty());  // single group flagged
}

TEST_CASE("expand/collapse round-trip is the identity", "[property]") {
  std::mt19937_64 rng(20240817);
  for (int rep = 0; rep < 60; ++rep) {
    auto t = testutil::random_table(rng, 2 + static_cast<int>(rng() % 4), 12, 0, 3);
    auto back = collapse(expand_table(t));
    REQUIRE(back.groups == t.groups);
    REQUIRE(back.grades == t.grades);
    REQUIRE(back.counts == t.counts);
  }
}

TEST_CASE("long CSV reconstructs Table 1") {
  auto d = parse_long_csv(testutil::green_long_csv());
  REQUIRE(d.group_sizes() == std::vector<int>{14, 12, 13, 14, 14});
  auto t = collapse(d);
  REQUIRE(t.counts[0] == std::vector<long long>{9, 4, 1});
  REQUIRE(t.counts[3] == std::vector<long long>{3, 10, 1});
}

TEST_CASE("long CSV error paths") {
  CHECK_THROWS_WITH(parse_long_csv("group,severity\n"), Catch::Contains("no records"));
  CHECK_THROWS_WITH(parse_long_csv("grp,severity\na,1\n"), Catch::Contains("missing column"));
  CHECK_THROWS_WITH(parse_long_csv("group,severity\na,x\n"), Catch::Contains("row 2"));
  LongSchema s;
  s.group_order = {"a", "b"};
  CHECK_THROWS_WITH(parse_long_csv("group,severity\na,1\nz,2\n", s), Catch::Contains("unknown group"));
}

TEST_CASE("single-group long input is valid but flagged") {
  auto d = parse_long_csv("group,severity\nA,1\nA,2\nA,1\n");
  REQUIRE(d.n_groups() == 1);
  REQUIRE_FALSE(d.notes.empty());
}

TEST_CASE("long CSV reads group doses") {
  auto d = parse_long_csv("group,dose,severity\nc,0,1\nc,0,2\nlo,10,2\nhi,50,3\n");
  REQUIRE(d.has_doses());
  REQUIRE(d.doses() == std::vector<double>{0, 10, 50});
  CHECK_THROWS_WITH(parse_long_csv("group,dose,severity\nc,0,1\nc,5,2\n"),
                    Catch::Contains("conflicting doses"));
}

TEST_CASE("control group can be re-anchored") {
  auto d = parse_long_csv("group,severity\nb,1\nb,2\na,2\na,3\n");
  d.set_control("a");
  REQUIRE(d.group_labels == std::vector<std::string>{"a", "b"});
  auto t = collapse(d);
  REQUIRE(t.counts[0] == std::vector<long long>{0, 1, 1});
}

TEST_CASE("binarize follows the strict > cut rule") {
  auto d = testutil::green_dataset();
  auto b = binarize(d, {1, 2});
  REQUIRE(b.labels == std::vector<std::string>{"EP1", "EP2"});
  // group 1: four 2s + one 3 exceed cut 1; one 3 exceeds cut 2
  double s1 = 0, s2 = 0;
  for (int i = 0; i < 14; ++i) {
    s1 += b.columns(i, 0);
    s2 += b.columns(i, 1);
  }
  REQUIRE(s1 == 5.0);
  REQUIRE(s2 == 1.0);
}

TEST_CASE("binarize rejects out-of-range cutpoints") {
  auto d = testutil::green_dataset();
  CHECK_THROWS_AS(binarize(d, {3}), parse_error);  // g_max
  CHECK_THROWS_AS(binarize(d, {0}), parse_error);
  REQUIRE(binarize(d).cutpoints == std::vector<int>{1, 2});
}

TEST_CASE("constant dataset binarizes with a warning") {
  auto t = parse_table_csv("group,1,2\na,3,0\nb,4,0\n");
  auto d = expand_table(t);
  auto b = binarize(d, {1});
  REQUIRE_FALSE(b.warnings.empty());
  REQUIRE(b.columns.col(0).sum() == 0.0);
}

TEST_CASE("binarization is monotone in the cutpoint and matches table tails", "[property]") {
  std::mt19937_64 rng(7);
  for (int rep = 0; rep < 40; ++rep) {
    auto t = testutil::random_table(rng, 3, 10, 1, 4);
    auto d = expand_table(t);
    auto b = binarize(d);
    for (Eigen::Index i = 0; i < b.columns.rows(); ++i)
      for (std::size_t c = 1; c < b.cutpoints.size(); ++c)
        REQUIRE(b.columns(i, static_cast<Eigen::Index>(c - 1)) >=
                b.columns(i, static_cast<Eigen::Index>(c)));
    // column sums per group equal the table count of grades > c
    for (std::size_t c = 0; c < b.cutpoints.size(); ++c) {
      std::vector<double> got(t.groups.size(), 0.0);
      for (std::size_t i = 0; i < d.records.size(); ++i)
        got[static_cast<std::size_t>(d.records[i].group)] += b.columns(static_cast<Eigen::Index>(i),
                                                                        static_cast<Eigen::Index>(c));
      for (std::size_t g = 0; g < t.groups.size(); ++g) {
        long long want = 0;
        for (std::size_t j = 0; j < t.grades.size(); ++j)
          if (t.grades[j] > b.cutpoints[c]) want += t.counts[g][j];
        REQUIRE(got[g] == static_cast<double>(want));
      }
    }
  }
}

TEST_CASE("raw-score augmentation prepends the severity column") {
  auto d = testutil::green_dataset();
  auto b = with_raw_score(d, binarize(d, {1}));
  REQUIRE(b.labels == std::vector<std::string>{"score", "EP1"});
  REQUIRE(b.columns(0, 0) == 1.0);
  REQUIRE(b.columns.rows() == 67);
}

TEST_CASE("long/table serialization round-trips") {
  auto d = testutil::green_dataset();
  auto d2 = parse_long_csv(to_long_csv(d));
  REQUIRE(collapse(d2).counts == collapse(d).counts);
  auto t = collapse(d);
  auto t2 = parse_table_csv(to_table_csv(t));
  REQUIRE(t2.counts == t.counts);
  REQUIRE(t2.grades == t.grades);
}
