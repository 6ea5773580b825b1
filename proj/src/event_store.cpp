#include "reclab/event_store.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "json.hpp"
#include "reclab/errors.hpp"

namespace reclab {

using ojson = nlohmann::ordered_json;

Timestamp LogRecord::timestamp() const {
  return is_impression() ? impression().requested_at : click().clicked_at;
}

bool record_order(const LogRecord& a, const LogRecord& b) {
  const auto ta = a.timestamp();
  const auto tb = b.timestamp();
  return ta != tb ? ta < tb : a.seq < b.seq;
}

std::string encode_record(const LogRecord& record) {
  ojson j;
  if (record.is_impression()) {
    const auto& r = record.impression();
    j["type"] = "impression";
    j["seq"] = record.seq;
    j["set_id"] = r.set_id;
    j["partner_id"] = r.partner_id;
    j["assigned_engine"] = r.assigned_engine;
    j["serving_engine"] = r.serving_engine;
    j["fallback_occurred"] = r.fallback_occurred;
    j["requested_at"] = to_iso8601(r.requested_at);
    j["latency_ms"] = r.latency_ms;
    ojson items = ojson::array();
    for (const auto& item : r.items) {
      ojson i;
      i["position"] = item.position;
      i["title"] = item.title;
      i["target_url"] = item.target_url;
      if (item.score) i["score"] = *item.score;
      if (item.origin_doc_id) i["origin_doc_id"] = *item.origin_doc_id;
      items.push_back(std::move(i));
    }
    j["items"] = std::move(items);
  } else {
    const auto& c = record.click();
    j["type"] = "click";
    j["seq"] = record.seq;
    j["set_id"] = c.set_id;
    j["position"] = c.position;
    j["clicked_at"] = to_iso8601(c.clicked_at);
    j["is_duplicate"] = c.is_duplicate;
  }
  return j.dump();
}

LogRecord decode_record(std::string_view line, std::size_t line_no) {
  try {
    const auto j = ojson::parse(line);
    LogRecord record;
    record.seq = j.at("seq").get<std::uint64_t>();
    const auto type = j.at("type").get<std::string>();
    if (type == "impression") {
      ImpressionRecord r;
      r.set_id = j.at("set_id").get<std::string>();
      r.partner_id = j.at("partner_id").get<std::string>();
      r.assigned_engine = j.at("assigned_engine").get<std::string>();
      r.serving_engine = j.at("serving_engine").get<std::string>();
      r.fallback_occurred = j.at("fallback_occurred").get<bool>();
      r.requested_at = parse_iso8601(j.at("requested_at").get<std::string>());
      r.latency_ms = j.at("latency_ms").get<std::int64_t>();
      for (const auto& i : j.at("items")) {
        RecommendationItem item;
        item.position = i.at("position").get<int>();
        item.title = i.at("title").get<std::string>();
        item.target_url = i.at("target_url").get<std::string>();
        if (i.contains("score")) item.score = i["score"].get<double>();
        if (i.contains("origin_doc_id")) item.origin_doc_id = i["origin_doc_id"].get<std::string>();
        r.items.push_back(std::move(item));
      }
      validate_impression(r);
      record.body = std::move(r);
    } else if (type == "click") {
      ClickEvent c;
      c.set_id = j.at("set_id").get<std::string>();
      c.position = j.at("position").get<int>();
      c.clicked_at = parse_iso8601(j.at("clicked_at").get<std::string>());
      c.is_duplicate = j.at("is_duplicate").get<bool>();
      record.body = std::move(c);
    } else {
      throw LineError("MalformedLine", line_no, "unknown record type '" + type + "'");
    }
    return record;
  } catch (const ojson::exception& e) {
    throw LineError("MalformedLine", line_no, e.what());
  } catch (const ValidationError& e) {
    throw LineError("MalformedLine", line_no, e.what());
  }
}

FileStorage::FileStorage(std::string path, bool fsync_on_append) : path_(std::move(path)), fsync_(fsync_on_append) {
  {
    std::ifstream in(path_, std::ios::binary);
    if (in) {
      std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
      const auto last_newline = content.rfind('\n');
      const std::size_t keep = last_newline == std::string::npos ? 0 : last_newline + 1;
      if (keep != content.size()) {
        // Torn tail from an interrupted append; it was never acknowledged.
        if (::truncate(path_.c_str(), off_t(keep)) != 0) {
          throw StorageError("StorageUnavailable", "cannot truncate '" + path_ + "': " + std::strerror(errno));
        }
      }
      std::size_t start = 0;
      while (start < keep) {
        const auto end = content.find('\n', start);
        if (end > start) recovered_.push_back(content.substr(start, end - start));
        start = end + 1;
      }
    }
  }
  fd_ = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd_ < 0) throw StorageError("StorageUnavailable", "cannot open '" + path_ + "': " + std::strerror(errno));
}

FileStorage::~FileStorage() {
  if (fd_ >= 0) ::close(fd_);
}

void FileStorage::append(std::span<const std::string> lines) {
  std::string buffer;
  for (const auto& line : lines) {
    buffer += line;
    buffer += '\n';
  }
  const char* data = buffer.data();
  std::size_t remaining = buffer.size();
  while (remaining > 0) {
    const auto written = ::write(fd_, data, remaining);
    if (written < 0) {
      if (errno == EINTR) continue;
      throw StorageError("StorageUnavailable", "write to '" + path_ + "' failed: " + std::strerror(errno));
    }
    data += written;
    remaining -= std::size_t(written);
  }
  if (fsync_ && ::fdatasync(fd_) != 0) {
    throw StorageError("StorageUnavailable", "fsync of '" + path_ + "' failed: " + std::strerror(errno));
  }
}

std::vector<std::string> FileStorage::recovered_lines() { return std::move(recovered_); }

void MemoryStorage::append(std::span<const std::string> lines) {
  std::lock_guard lock(mutex_);
  lines_.insert(lines_.end(), lines.begin(), lines.end());
}

std::vector<std::string> MemoryStorage::lines() const {
  std::lock_guard lock(mutex_);
  return lines_;
}

EventStore::EventStore(std::unique_ptr<LogStorage> storage) : storage_(std::move(storage)) {
  std::size_t line_no = 0;
  std::unordered_set<std::uint64_t> seqs;
  for (const auto& line : storage_->recovered_lines()) {
    ++line_no;
    auto record = decode_record(line, line_no);
    if (!seqs.insert(record.seq).second) {
      throw LineError("MalformedLine", line_no, "sequence number " + std::to_string(record.seq) + " repeats");
    }
    if (record.is_impression()) {
      if (impressions_.contains(record.impression().set_id)) {
        throw LineError("ReferentialViolation", line_no, "duplicate set_id '" + record.impression().set_id + "'");
      }
    } else {
      const auto& c = record.click();
      auto it = impressions_.find(c.set_id);
      if (it == impressions_.end() || c.position < 1 || std::size_t(c.position) > it->second.clicks.size()) {
        throw LineError("ReferentialViolation", line_no, "click references no stored impression item");
      }
    }
    next_seq_ = std::max(next_seq_, record.seq + 1);
    apply(std::move(record));
  }
}

std::unique_ptr<EventStore> EventStore::open_file(const std::string& path, bool fsync_on_append) {
  return std::make_unique<EventStore>(std::make_unique<FileStorage>(path, fsync_on_append));
}

std::unique_ptr<EventStore> EventStore::in_memory() {
  return std::make_unique<EventStore>(std::make_unique<MemoryStorage>());
}

void EventStore::apply(LogRecord record) {
  std::unique_lock lock(state_mutex_);
  const auto index = records_.size();
  if (record.is_impression()) {
    const auto& r = record.impression();
    impressions_.emplace(r.set_id, ImpressionState{index, std::vector<std::uint32_t>(r.items.size(), 0)});
    item_count_ += r.items.size();
  } else {
    const auto& c = record.click();
    ++impressions_.at(c.set_id).clicks.at(std::size_t(c.position - 1));
    click_indices_.push_back(index);
  }
  records_.push_back(std::move(record));
}

void EventStore::commit(std::vector<LogRecord> batch) {
  std::vector<std::string> lines;
  lines.reserve(batch.size());
  for (const auto& r : batch) lines.push_back(encode_record(r));
  storage_->append(lines);
  for (auto& r : batch) apply(std::move(r));
}

void EventStore::check_impression(const ImpressionRecord& record) const {
  validate_impression(record);
  if (impressions_.contains(record.set_id)) {
    throw ConflictError("DuplicateSet", "set_id '" + record.set_id + "' already stored");
  }
}

std::uint64_t EventStore::append_impression(const ImpressionRecord& record) {
  std::lock_guard writer(write_mutex_);
  check_impression(record);
  const auto seq = next_seq_;
  std::vector<LogRecord> batch;
  batch.push_back(LogRecord{seq, record});
  commit(std::move(batch));
  next_seq_ = seq + 1;
  return seq;
}

ClickEvent EventStore::append_click(std::string_view set_id, int position, Timestamp clicked_at) {
  std::lock_guard writer(write_mutex_);
  // Only this writer mutates state, so reading it here needs no state lock.
  auto it = impressions_.find(std::string(set_id));
  if (it == impressions_.end() || position < 1 || std::size_t(position) > it->second.clicks.size()) {
    throw NotFoundError("UnknownImpression",
                        "no impression item (" + std::string(set_id) + ", " + std::to_string(position) + ")");
  }
  // A click never sorts ahead of its impression, even if the clock stepped back.
  const auto& shown = records_[it->second.record_index].impression();
  ClickEvent event{std::string(set_id), position, std::max(clicked_at, shown.requested_at),
                   it->second.clicks[std::size_t(position - 1)] > 0};
  const auto seq = next_seq_;
  std::vector<LogRecord> batch;
  batch.push_back(LogRecord{seq, event});
  commit(std::move(batch));
  next_seq_ = seq + 1;
  return event;
}

std::optional<ImpressionRecord> EventStore::find_impression(std::string_view set_id) const {
  std::shared_lock lock(state_mutex_);
  auto it = impressions_.find(std::string(set_id));
  if (it == impressions_.end()) return std::nullopt;
  return records_[it->second.record_index].impression();
}

std::optional<std::string> EventStore::target_url(std::string_view set_id, int position) const {
  std::shared_lock lock(state_mutex_);
  auto it = impressions_.find(std::string(set_id));
  if (it == impressions_.end()) return std::nullopt;
  const auto& items = records_[it->second.record_index].impression().items;
  if (position < 1 || std::size_t(position) > items.size()) return std::nullopt;
  return items[std::size_t(position - 1)].target_url;
}

ClickCounts EventStore::click_counts(Timestamp as_of) const {
  std::shared_lock lock(state_mutex_);
  ClickCounts counts;
  for (auto index : click_indices_) {
    const auto& c = records_[index].click();
    if (c.is_duplicate || c.clicked_at > as_of) continue;
    const auto& r = records_[impressions_.at(c.set_id).record_index].impression();
    const auto& item = r.items.at(std::size_t(c.position - 1));
    if (item.origin_doc_id) ++counts[*item.origin_doc_id];
  }
  return counts;
}

std::vector<LogRecord> EventStore::records() const {
  std::shared_lock lock(state_mutex_);
  return records_;
}

std::size_t EventStore::impression_count() const {
  std::shared_lock lock(state_mutex_);
  return impressions_.size();
}

std::size_t EventStore::click_count() const {
  std::shared_lock lock(state_mutex_);
  return click_indices_.size();
}

std::size_t EventStore::item_count() const {
  std::shared_lock lock(state_mutex_);
  return item_count_;
}

bool EventStore::empty() const {
  std::shared_lock lock(state_mutex_);
  return records_.empty();
}

void EventStore::export_events(std::ostream& out, const TimeRange& range) const {
  std::vector<const LogRecord*> selected;
  std::shared_lock lock(state_mutex_);
  for (const auto& r : records_) {
    if (range.contains(r.timestamp())) selected.push_back(&r);
  }
  std::sort(selected.begin(), selected.end(), [](const LogRecord* a, const LogRecord* b) { return record_order(*a, *b); });
  for (const auto* r : selected) out << encode_record(*r) << '\n';
}

std::string EventStore::export_events(const TimeRange& range) const {
  std::ostringstream out;
  export_events(out, range);
  return out.str();
}

void EventStore::import_events(std::istream& in) {
  std::lock_guard writer(write_mutex_);
  if (!records_.empty()) throw Error("StoreNotEmpty", "import requires an empty store");

  std::vector<LogRecord> batch;
  std::unordered_map<std::string, std::size_t> item_counts;
  std::unordered_set<std::uint64_t> seqs;
  std::string line;
  std::size_t line_no = 0;
  std::uint64_t max_seq = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto record = decode_record(line, line_no);
    if (!seqs.insert(record.seq).second) {
      throw LineError("MalformedLine", line_no, "sequence number " + std::to_string(record.seq) + " repeats");
    }
    if (record.is_impression()) {
      const auto& r = record.impression();
      if (!item_counts.emplace(r.set_id, r.items.size()).second) {
        throw LineError("ReferentialViolation", line_no, "set_id '" + r.set_id + "' repeats");
      }
    } else {
      const auto& c = record.click();
      auto it = item_counts.find(c.set_id);
      if (it == item_counts.end() || c.position < 1 || std::size_t(c.position) > it->second) {
        throw LineError("ReferentialViolation", line_no, "click precedes or lacks its impression item");
      }
    }
    max_seq = std::max(max_seq, record.seq);
    batch.push_back(std::move(record));
  }
  if (batch.empty()) return;
  commit(std::move(batch));
  next_seq_ = max_seq + 1;
}

std::unique_ptr<EventStore> load_event_log(const std::string& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw Error("IoError", "cannot open event log '" + path + "'");
  std::string content((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());
  // A live store file may end in a torn, never-acknowledged line.
  const auto last_newline = content.rfind('\n');
  content.resize(last_newline == std::string::npos ? 0 : last_newline + 1);
  std::istringstream in(content);
  auto store = EventStore::in_memory();
  store->import_events(in);
  return store;
}

}  // namespace reclab
