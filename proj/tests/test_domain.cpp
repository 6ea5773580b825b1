#include <gtest/gtest.h>

#include <set>
#include <thread>
#include <unordered_set>

#include "generators.hpp"
#include "reclab/domain.hpp"
#include "reclab/errors.hpp"
#include "reclab/time.hpp"

namespace reclab {
namespace {

TEST(NormalizeTitle, CollapsesWhitespaceAndLowercases) {
  EXPECT_EQ(normalize_title("  Deep   Learning "), "deep learning");
  EXPECT_EQ(normalize_title("Graph-Based IR"), "graph-based ir");
  EXPECT_EQ(normalize_title("a\t\nb"), "a b");
}

TEST(NormalizeTitle, EmptyInputIsRejected) {
  try {
    normalize_title("");
    FAIL() << "expected EmptyTitle";
  } catch (const ValidationError& e) {
    EXPECT_EQ(e.code(), "EmptyTitle");
  }
  EXPECT_THROW(normalize_title(" \t \n"), ValidationError);
}

TEST(NormalizeTitle, IsIdempotent) {
  Rng rng(7);
  for (int i = 0; i < 2000; ++i) {
    auto raw = gen::phrase(rng, 1, 6);
    for (int j = 0; j < 3; ++j) raw.insert(rng.below(raw.size() + 1), rng.below(2) ? "  " : "\t");
    const auto once = normalize_title(raw);
    EXPECT_EQ(normalize_title(once), once) << raw;
  }
}

TEST(ValidateItem, AcceptsWellFormedItem) {
  EXPECT_NO_THROW(validate_item({1, "Foo", "https://x.org/p1", std::nullopt, std::nullopt}));
  EXPECT_NO_THROW(validate_item({1, "Foo", "HTTP://x.org", 0.5, "d1"}));
}

TEST(ValidateItem, NamesTheFailingField) {
  auto field_of = [](const RecommendationItem& item) {
    try {
      validate_item(item);
    } catch (const ValidationError& e) {
      EXPECT_EQ(e.code(), "InvalidItem");
      return e.field();
    }
    return std::string("ok");
  };
  EXPECT_EQ(field_of({1, "", "https://x.org/p1", {}, {}}), "title");
  EXPECT_EQ(field_of({1, "   ", "https://x.org/p1", {}, {}}), "title");
  EXPECT_EQ(field_of({1, "Foo", "ftp://x.org/p1", {}, {}}), "url");
  EXPECT_EQ(field_of({1, "Foo", "", {}, {}}), "url");
  EXPECT_EQ(field_of({1, "Foo", "https://", {}, {}}), "url");
  EXPECT_EQ(field_of({1, "Foo", "/relative/path", {}, {}}), "url");
}

TEST(ValidateQuery, BoundsMaxCount) {
  EXPECT_EQ(validate_query({"p", " Deep  Learning", 6}), "deep learning");
  EXPECT_NO_THROW(validate_query({"p", "x", 1}));
  EXPECT_NO_THROW(validate_query({"p", "x", 50}));
  EXPECT_THROW(validate_query({"p", "x", 0}), ValidationError);
  EXPECT_THROW(validate_query({"p", "x", 51}), ValidationError);
  EXPECT_THROW(validate_query({"p", "   ", 6}), ValidationError);
}

TEST(Impression, InvariantsAreChecked) {
  ImpressionRecord r{"s1", "p", "ext", "ext", false, {{1, "a", "https://a.org", {}, {}}}, {}, 5};
  EXPECT_NO_THROW(validate_impression(r));

  auto bad = r;
  bad.items.clear();
  EXPECT_THROW(validate_impression(bad), ValidationError);

  bad = r;
  bad.serving_engine = "cbf";
  EXPECT_THROW(validate_impression(bad), ValidationError);
  bad.fallback_occurred = true;
  EXPECT_NO_THROW(validate_impression(bad));

  bad = r;
  bad.items.push_back({3, "b", "https://b.org", {}, {}});
  EXPECT_THROW(validate_impression(bad), ValidationError);
  renumber(bad.items);
  EXPECT_NO_THROW(validate_impression(bad));
  EXPECT_TRUE(has_contiguous_positions(bad.items));
}

TEST(SetIds, SuccessiveCallsDiffer) {
  SetIdGenerator ids;
  EXPECT_NE(ids.next(), ids.next());
}

TEST(SetIds, AMillionIdsAreDistinct) {
  SetIdGenerator ids(123);
  std::unordered_set<std::string> seen;
  seen.reserve(1'000'000);
  for (int i = 0; i < 1'000'000; ++i) seen.insert(ids.next());
  EXPECT_EQ(seen.size(), 1'000'000u);
}

TEST(SetIds, SeededGeneratorsReplay) {
  SetIdGenerator a(99);
  SetIdGenerator b(99);
  SetIdGenerator c(100);
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next();
    EXPECT_EQ(x, b.next());
    EXPECT_NE(x, c.next());
  }
}

TEST(SetIds, LookLikeVersion4Uuids) {
  SetIdGenerator ids(5);
  const auto id = ids.next();
  ASSERT_EQ(id.size(), 36u);
  EXPECT_EQ(id[14], '4');
  EXPECT_NE(std::string("89ab").find(id[19]), std::string::npos);
}

TEST(SetIds, ConcurrentCallersNeverCollide) {
  SetIdGenerator ids;
  std::vector<std::vector<std::string>> out(8);
  std::vector<std::thread> threads;
  for (int t = 0; t < 8; ++t) {
    threads.emplace_back([&, t] {
      for (int i = 0; i < 5000; ++i) out[std::size_t(t)].push_back(ids.next());
    });
  }
  for (auto& t : threads) t.join();
  std::set<std::string> all;
  for (const auto& v : out) all.insert(v.begin(), v.end());
  EXPECT_EQ(all.size(), 40000u);
}

TEST(Time, Iso8601RoundTrip) {
  const auto ts = make_timestamp(2017, 6, 30, 23, 59, 58, 7);
  EXPECT_EQ(to_iso8601(ts), "2017-06-30T23:59:58.007Z");
  EXPECT_EQ(parse_iso8601("2017-06-30T23:59:58.007Z"), ts);
  EXPECT_THROW(parse_iso8601("2017-06-30 23:59:58Z"), ValidationError);
  EXPECT_THROW(parse_iso8601("2017-02-30T00:00:00.000Z"), ValidationError);
}

TEST(Time, MonthBucketsAreUtc) {
  EXPECT_EQ(Month::of(make_timestamp(2017, 6, 30, 23, 59, 59, 999)), (Month{2017, 6}));
  EXPECT_EQ(Month::of(make_timestamp(2017, 7, 1)), (Month{2017, 7}));
  EXPECT_EQ((Month{2017, 12}).next(), (Month{2018, 1}));
  EXPECT_EQ(Month::parse("2018-01").to_string(), "2018-01");
  EXPECT_THROW(Month::parse("2018-13"), ValidationError);
}

}  // namespace
}  // namespace reclab
