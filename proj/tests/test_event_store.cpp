#include <gtest/gtest.h>

#include <csignal>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>
#include <thread>
#include <unistd.h>

#include "generators.hpp"
#include "reclab/event_store.hpp"

namespace reclab {
namespace {

namespace fs = std::filesystem;
using namespace std::chrono_literals;

ImpressionRecord impression(const std::string& set_id, int items, Timestamp at,
                            const std::string& engine = "cbf") {
  ImpressionRecord r;
  r.set_id = set_id;
  r.partner_id = "p1";
  r.assigned_engine = engine;
  r.serving_engine = engine;
  r.requested_at = at;
  r.latency_ms = 12;
  for (int p = 1; p <= items; ++p) {
    r.items.push_back({p, "Title " + std::to_string(p), "https://x.org/d" + std::to_string(p), 0.5,
                       "d" + std::to_string(p)});
  }
  return r;
}

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() / ("reclab-store-" + std::to_string(::getpid()) + "-" + std::to_string(counter_++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  static inline int counter_ = 0;
  fs::path path_;
};

const Timestamp t0 = make_timestamp(2017, 6, 1, 12);

TEST(EventStore, ReadsItsOwnWrites) {
  auto store = EventStore::in_memory();
  const auto r = impression("s1", 6, t0);
  const auto seq = store->append_impression(r);
  EXPECT_EQ(seq, 1u);
  EXPECT_EQ(store->find_impression("s1"), r);
  EXPECT_EQ(store->target_url("s1", 3), "https://x.org/d3");
  EXPECT_EQ(store->target_url("s1", 7), std::nullopt);
  EXPECT_EQ(store->impression_count(), 1u);
  EXPECT_EQ(store->item_count(), 6u);
}

TEST(EventStore, RejectsRepeatedSetIdAndInvalidRecords) {
  auto store = EventStore::in_memory();
  store->append_impression(impression("s1", 2, t0));
  EXPECT_THROW(store->append_impression(impression("s1", 3, t0)), ConflictError);
  auto gap = impression("s2", 3, t0);
  gap.items[2].position = 4;
  EXPECT_THROW(store->append_impression(gap), ValidationError);
  EXPECT_EQ(store->records().size(), 1u);
}

TEST(EventStore, ClickDuplicateFlag) {
  auto store = EventStore::in_memory();
  store->append_impression(impression("s1", 3, t0));
  EXPECT_FALSE(store->append_click("s1", 2, t0 + 1s).is_duplicate);
  EXPECT_TRUE(store->append_click("s1", 2, t0 + 2s).is_duplicate);
  EXPECT_FALSE(store->append_click("s1", 1, t0 + 3s).is_duplicate);
  EXPECT_EQ(store->click_count(), 3u);
}

TEST(EventStore, ClickWithoutImpressionIsRejected) {
  auto store = EventStore::in_memory();
  store->append_impression(impression("s1", 3, t0));
  EXPECT_THROW(store->append_click("nope", 1, t0), NotFoundError);
  EXPECT_THROW(store->append_click("s1", 4, t0), NotFoundError);
  EXPECT_THROW(store->append_click("s1", 0, t0), NotFoundError);
  EXPECT_EQ(store->click_count(), 0u);
}

TEST(EventStore, ClickIsNeverBeforeItsImpression) {
  auto store = EventStore::in_memory();
  store->append_impression(impression("s1", 1, t0));
  EXPECT_EQ(store->append_click("s1", 1, t0 - 5s).clicked_at, t0);
}

TEST(EventStore, SequenceNumbersIncrease) {
  auto store = EventStore::in_memory();
  for (int i = 0; i < 50; ++i) {
    store->append_impression(impression("s" + std::to_string(i), 1, t0 + std::chrono::seconds(i)));
    store->append_click("s" + std::to_string(i), 1, t0 + std::chrono::seconds(i));
  }
  const auto records = store->records();
  for (std::size_t i = 1; i < records.size(); ++i) EXPECT_LT(records[i - 1].seq, records[i].seq);
}

TEST(EventStore, ConcurrentWritersLoseNothing) {
  TempDir dir;
  auto store = EventStore::open_file(dir.file("events.jsonl"), false);
  constexpr int kWriters = 32;
  constexpr int kEach = 1000;
  std::vector<std::thread> threads;
  for (int w = 0; w < kWriters; ++w) {
    threads.emplace_back([&, w] {
      for (int i = 0; i < kEach; ++i) {
        store->append_impression(impression("w" + std::to_string(w) + "-" + std::to_string(i), 6, t0));
      }
    });
  }
  for (auto& t : threads) t.join();
  EXPECT_EQ(store->impression_count(), std::size_t(kWriters * kEach));
  EXPECT_EQ(store->item_count(), std::size_t(kWriters * kEach * 6));
  std::set<std::uint64_t> seqs;
  for (const auto& r : store->records()) seqs.insert(r.seq);
  EXPECT_EQ(seqs.size(), std::size_t(kWriters * kEach));
  store.reset();
  auto reopened = EventStore::open_file(dir.file("events.jsonl"), false);
  EXPECT_EQ(reopened->impression_count(), std::size_t(kWriters * kEach));
}

TEST(EventStore, ClickCountsByOriginDocument) {
  auto store = EventStore::in_memory();
  store->append_impression(impression("s1", 2, t0));
  store->append_click("s1", 1, t0 + 1s);
  store->append_click("s1", 1, t0 + 2s);  // duplicate, not counted
  store->append_impression(impression("s2", 2, t0 + 1h));
  store->append_click("s2", 1, t0 + 2h);
  EXPECT_EQ(store->click_counts(t0 + 3h), (ClickCounts{{"d1", 2}}));
  EXPECT_EQ(store->click_counts(t0 + 1s), (ClickCounts{{"d1", 1}}));
  EXPECT_TRUE(store->click_counts(t0).empty());

  auto external = EventStore::in_memory();
  auto r = impression("e1", 2, t0, "ext");
  for (auto& item : r.items) item.origin_doc_id.reset();
  external->append_impression(r);
  external->append_click("e1", 1, t0 + 1s);
  EXPECT_TRUE(external->click_counts(t0 + 1h).empty());
  EXPECT_TRUE(EventStore::in_memory()->click_counts(t0).empty());
}

std::unique_ptr<EventStore> store_from(const std::vector<LogRecord>& log) {
  auto store = EventStore::in_memory();
  for (const auto& rec : log) {
    if (rec.is_impression()) {
      store->append_impression(rec.impression());
    } else {
      store->append_click(rec.click().set_id, rec.click().position, rec.click().clicked_at);
    }
  }
  return store;
}

TEST(EventStore, ExportImportExportIsByteIdentical) {
  for (std::uint64_t seed = 1; seed <= 40; ++seed) {
    const auto source = store_from(gen::random_log(seed, 400));
    const auto first = source->export_events();
    auto copy = EventStore::in_memory();
    std::istringstream in(first);
    copy->import_events(in);
    EXPECT_EQ(copy->export_events(), first) << "seed " << seed;
    EXPECT_EQ(copy->impression_count(), source->impression_count());
    EXPECT_EQ(copy->click_count(), source->click_count());
  }
}

TEST(EventStore, ExportIsSortedAndRangeFiltered) {
  auto store = EventStore::in_memory();
  store->append_impression(impression("late", 1, t0 + 48h));
  store->append_impression(impression("early", 1, t0));
  store->append_click("early", 1, t0 + 1h);
  std::istringstream lines(store->export_events());
  std::string line;
  std::vector<LogRecord> decoded;
  for (std::size_t n = 1; std::getline(lines, line); ++n) decoded.push_back(decode_record(line, n));
  ASSERT_EQ(decoded.size(), 3u);
  EXPECT_TRUE(std::is_sorted(decoded.begin(), decoded.end(), record_order));
  EXPECT_EQ(decoded[0].impression().set_id, "early");

  EXPECT_EQ(store->export_events({t0 + 100h, std::nullopt}), "");
  EXPECT_EQ(store->export_events({t0, t0}), "");
  const auto day_one = store->export_events({t0, t0 + 24h});
  EXPECT_EQ(std::count(day_one.begin(), day_one.end(), '\n'), 2);
}

TEST(EventStore, TwoStoresWithTheSameRecordsExportTheSameBytes) {
  const auto log = gen::random_log(77, 300);
  EXPECT_EQ(store_from(log)->export_events(), store_from(log)->export_events());
}

TEST(EventStore, ImportRejectsBadInput) {
  auto store = EventStore::in_memory();
  store->append_impression(impression("s1", 1, t0));
  std::istringstream one(store->export_events());
  try {
    store->import_events(one);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "StoreNotEmpty");
  }

  const std::string orphan_click =
      R"({"type":"click","seq":1,"set_id":"ghost","position":1,"clicked_at":"2017-06-01T00:00:00.000Z","is_duplicate":false})";
  auto fresh = EventStore::in_memory();
  std::istringstream in(orphan_click + "\n");
  try {
    fresh->import_events(in);
    FAIL();
  } catch (const LineError& e) {
    EXPECT_EQ(e.code(), "ReferentialViolation");
  }
  EXPECT_TRUE(fresh->empty());

  std::istringstream garbage("{\"type\":\"impression\"\nnot json\n");
  try {
    fresh->import_events(garbage);
    FAIL();
  } catch (const LineError& e) {
    EXPECT_EQ(e.code(), "MalformedLine");
    EXPECT_NE(std::string(e.what()).find("line 1"), std::string::npos);
  }
  EXPECT_TRUE(fresh->empty());
}

TEST(EventStore, ReopenedFileResumesSequence) {
  TempDir dir;
  const auto path = dir.file("events.jsonl");
  {
    auto store = EventStore::open_file(path);
    store->append_impression(impression("s1", 2, t0));
    store->append_click("s1", 1, t0 + 1s);
  }
  auto store = EventStore::open_file(path);
  EXPECT_EQ(store->records().size(), 2u);
  EXPECT_EQ(store->append_impression(impression("s2", 1, t0 + 2s)), 3u);
  EXPECT_TRUE(store->append_click("s1", 1, t0 + 3s).is_duplicate);
}

TEST(EventStore, TornTailIsDroppedOnOpen) {
  TempDir dir;
  const auto path = dir.file("events.jsonl");
  {
    auto store = EventStore::open_file(path);
    store->append_impression(impression("s1", 2, t0));
  }
  {
    std::ofstream out(path, std::ios::app);
    out << R"({"type":"impression","seq":2,"set_id":"torn","par)";
  }
  auto store = EventStore::open_file(path);
  EXPECT_EQ(store->impression_count(), 1u);
  store->append_impression(impression("s2", 1, t0));
  store.reset();
  EXPECT_EQ(EventStore::open_file(path)->impression_count(), 2u);
  EXPECT_EQ(load_event_log(path)->impression_count(), 2u);
}

// The child appends with fsync and reports each acknowledged set id; after a
// hard kill every acknowledged record must be readable.
TEST(EventStore, AcknowledgedAppendsSurviveAHardKill) {
  TempDir dir;
  const auto path = dir.file("events.jsonl");
  int fds[2];
  ASSERT_EQ(::pipe(fds), 0);
  const pid_t child = ::fork();
  ASSERT_GE(child, 0);
  if (child == 0) {
    ::close(fds[0]);
    auto store = EventStore::open_file(path, true);
    for (int i = 0;; ++i) {
      store->append_impression(impression("k" + std::to_string(i), 6, t0));
      const std::int32_t acked = i;
      if (::write(fds[1], &acked, sizeof(acked)) != sizeof(acked)) ::_exit(1);
    }
  }
  ::close(fds[1]);
  std::int32_t last = -1;
  std::int32_t value = 0;
  while (last < 200 && ::read(fds[0], &value, sizeof(value)) == sizeof(value)) last = value;
  ::kill(child, SIGKILL);
  int status = 0;
  ::waitpid(child, &status, 0);
  while (::read(fds[0], &value, sizeof(value)) == sizeof(value)) last = value;
  ::close(fds[0]);
  ASSERT_GE(last, 200);

  auto store = EventStore::open_file(path);
  for (int i = 0; i <= last; ++i) EXPECT_TRUE(store->find_impression("k" + std::to_string(i))) << i;
  EXPECT_GE(store->impression_count(), std::size_t(last + 1));
  EXPECT_LE(store->impression_count(), std::size_t(last + 2));
}

TEST(Codec, RoundTripsRecords) {
  for (const auto& rec : gen::random_log(5, 200)) {
    EXPECT_EQ(decode_record(encode_record(rec), 1), rec);
  }
  auto r = impression("s1", 1, t0);
  r.items[0].score.reset();
  r.items[0].origin_doc_id.reset();
  const auto line = encode_record({9, r});
  EXPECT_EQ(line.find("score"), std::string::npos);
  EXPECT_EQ(line.rfind(R"({"type":"impression","seq":9,"set_id":"s1")", 0), 0u);
  EXPECT_THROW(decode_record(R"({"type":"bogus","seq":1})", 4), LineError);
}

}  // namespace
}  // namespace reclab
