#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

#include "reclab/domain.hpp"
#include "reclab/engines.hpp"

namespace reclab {

struct LogRecord {
  std::uint64_t seq = 0;
  std::variant<ImpressionRecord, ClickEvent> body;

  Timestamp timestamp() const;
  bool is_impression() const { return std::holds_alternative<ImpressionRecord>(body); }
  const ImpressionRecord& impression() const { return std::get<ImpressionRecord>(body); }
  const ClickEvent& click() const { return std::get<ClickEvent>(body); }

  bool operator==(const LogRecord&) const = default;
};

// One JSON object per line, keys in a fixed order. The same line format is
// used on disk and for export.
std::string encode_record(const LogRecord& record);
// Throws LineError("MalformedLine").
LogRecord decode_record(std::string_view line, std::size_t line_no);

// Orders records by (timestamp, seq).
bool record_order(const LogRecord& a, const LogRecord& b);

// Half-open [from, to) on record timestamps; unset ends are unbounded.
struct TimeRange {
  std::optional<Timestamp> from;
  std::optional<Timestamp> to;

  bool contains(Timestamp ts) const { return (!from || ts >= *from) && (!to || ts < *to); }
};

// Where encoded lines go. append() returns only once the lines are durable,
// and either throws StorageError("StorageUnavailable") or stores all of them.
class LogStorage {
 public:
  virtual ~LogStorage() = default;
  virtual void append(std::span<const std::string> lines) = 0;
  // Lines present at open time, in append order.
  virtual std::vector<std::string> recovered_lines() = 0;
};

// Append-only file. A trailing partial line left by a crash is truncated on
// open; every complete line is kept.
class FileStorage final : public LogStorage {
 public:
  FileStorage(std::string path, bool fsync_on_append = true);
  ~FileStorage() override;
  FileStorage(const FileStorage&) = delete;
  FileStorage& operator=(const FileStorage&) = delete;

  void append(std::span<const std::string> lines) override;
  std::vector<std::string> recovered_lines() override;

 private:
  std::string path_;
  bool fsync_;
  int fd_ = -1;
  std::vector<std::string> recovered_;
};

class MemoryStorage final : public LogStorage {
 public:
  void append(std::span<const std::string> lines) override;
  std::vector<std::string> recovered_lines() override { return {}; }
  std::vector<std::string> lines() const;

 private:
  mutable std::mutex mutex_;
  std::vector<std::string> lines_;
};

// System of record for impressions and clicks. Appends go through a single
// writer and are acknowledged after the storage reports them durable;
// readers run concurrently against the committed prefix.
class EventStore {
 public:
  explicit EventStore(std::unique_ptr<LogStorage> storage);
  static std::unique_ptr<EventStore> open_file(const std::string& path, bool fsync_on_append = true);
  static std::unique_ptr<EventStore> in_memory();

  EventStore(const EventStore&) = delete;
  EventStore& operator=(const EventStore&) = delete;

  // Throws ValidationError, ConflictError("DuplicateSet") or StorageError.
  std::uint64_t append_impression(const ImpressionRecord& record);
  // is_duplicate is computed here; the caller's value is ignored.
  // Throws NotFoundError("UnknownImpression") or StorageError.
  ClickEvent append_click(std::string_view set_id, int position, Timestamp clicked_at);

  std::optional<ImpressionRecord> find_impression(std::string_view set_id) const;
  // Target URL of an impression item, if it exists.
  std::optional<std::string> target_url(std::string_view set_id, int position) const;

  // Non-duplicate clicks at or before as_of, per origin_doc_id. Items without
  // an origin document (external engines) are not counted.
  ClickCounts click_counts(Timestamp as_of) const;

  std::vector<LogRecord> records() const;  // append order
  std::size_t impression_count() const;
  std::size_t click_count() const;
  std::size_t item_count() const;
  bool empty() const;

  // Records in (timestamp, seq) order, one line each.
  void export_events(std::ostream& out, const TimeRange& range = {}) const;
  std::string export_events(const TimeRange& range = {}) const;
  // Target must be empty: throws Error("StoreNotEmpty"). Line errors are
  // LineError("MalformedLine") or LineError("ReferentialViolation").
  void import_events(std::istream& in);

 private:
  struct ImpressionState {
    std::size_t record_index = 0;
    std::vector<std::uint32_t> clicks;  // per position, index 0 is position 1
  };

  // Caller holds write_mutex_. Validates and returns the record to commit.
  void check_impression(const ImpressionRecord& record) const;
  void commit(std::vector<LogRecord> batch);
  void apply(LogRecord record);

  std::unique_ptr<LogStorage> storage_;
  std::mutex write_mutex_;
  mutable std::shared_mutex state_mutex_;
  std::vector<LogRecord> records_;
  std::unordered_map<std::string, ImpressionState> impressions_;
  std::vector<std::size_t> click_indices_;
  std::size_t item_count_ = 0;
  std::uint64_t next_seq_ = 1;
};

// Reads an exported (or on-disk) log into a fresh in-memory store.
std::unique_ptr<EventStore> load_event_log(const std::string& path);

}  // namespace reclab
