#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

namespace ppr {

/// One (prompt, image) entry of a user's generation history.
struct PromptRecord {
  std::string record_id;
  std::string user_id;
  std::string prompt_text;
  std::optional<std::string> image_ref;
  std::optional<int> image_width;
  std::optional<int> image_height;
  std::optional<std::string> created_at;  // original ISO-8601 text
  std::optional<std::string> source_url;

  /// Milliseconds since the Unix epoch, parsed from created_at.
  std::optional<std::int64_t> created_ms;
  /// Ingest order; the ordering surrogate when created_at is missing.
  std::uint64_t sequence = 0;

  /// Compares the user-visible fields only (not sequence).
  bool operator==(const PromptRecord& other) const;
};

/// Throws ValidationError when a type invariant does not hold.
void validate(const PromptRecord& record);

/// Parses "YYYY-MM-DD", "YYYY-MM-DDTHH:MM:SS[.fff][Z|+HH:MM]" (space also accepted).
std::optional<std::int64_t> parse_timestamp_ms(std::string_view text);

nlohmann::json to_json(const PromptRecord& record);
/// Throws ValidationError naming the offending field.
PromptRecord record_from_json(const nlohmann::json& j);

struct UserHistory {
  std::string user_id;
  /// Ordered by created_at ascending; equal timestamps by record_id;
  /// records without a timestamp come first, in ingest order.
  std::vector<PromptRecord> records;

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }
  const PromptRecord* find(std::string_view record_id) const;
  std::vector<std::string> prompts() const;

  bool operator==(const UserHistory&) const = default;
};

/// True when `a` sorts before `b` in history order.
bool history_before(const PromptRecord& a, const PromptRecord& b);

/// Count of unique prompts after trim + whitespace collapse + casefold.
std::size_t distinct_prompt_count(const UserHistory& history);
std::size_t distinct_prompt_count(const std::vector<std::string>& prompts);

/// Immutable-by-convention set of user histories with unique record ids.
class Corpus {
 public:
  /// Throws DuplicateError on a repeated record_id, ValidationError on an
  /// invalid record.
  void add(PromptRecord record);
  /// Registers a user with an empty history.
  void add_user(const std::string& user_id);

  const std::map<std::string, UserHistory>& users() const { return users_; }
  const UserHistory* find_user(std::string_view user_id) const;
  bool contains_record(const std::string& record_id) const { return ids_.count(record_id) > 0; }

  std::size_t user_count() const { return users_.size(); }
  std::size_t record_count() const { return ids_.size(); }

  bool operator==(const Corpus& other) const { return users_ == other.users_; }

 private:
  std::map<std::string, UserHistory> users_;
  std::unordered_set<std::string> ids_;
  std::uint64_t next_sequence_ = 0;
};

struct IngestOptions {
  std::size_t min_images = 18;
  std::size_t min_distinct_prompts = 12;
};

struct IngestSummary {
  std::size_t lines = 0;
  std::size_t users_kept = 0;
  std::size_t users_dropped = 0;
  std::size_t records_kept = 0;
  std::size_t records_dropped = 0;
};

struct IngestResult {
  Corpus corpus;
  IngestSummary summary;
};

/// Reads PIP-format JSONL. Users below either threshold are dropped and
/// counted. Throws ParseError (with line number) on malformed lines or
/// missing fields, DuplicateError on repeated record ids.
IngestResult ingest_jsonl(const std::string& path, const IngestOptions& options = {});
IngestResult ingest_jsonl(std::istream& in, const IngestOptions& options = {});

/// Users in id order, records in history order; ingest_jsonl reads it back
/// to an equal corpus (with thresholds disabled).
void export_jsonl(const Corpus& corpus, std::ostream& out);

struct DatasetSplit {
  std::uint64_t seed = 0;
  std::map<std::string, std::vector<PromptRecord>> train;
  std::map<std::string, std::vector<PromptRecord>> test;

  std::size_t train_size() const;
  std::size_t test_size() const;
  /// Test record ids of one user (empty when unknown).
  std::set<std::string> test_ids(const std::string& user_id) const;

  bool operator==(const DatasetSplit&) const = default;
};

/// Two records per user, uniformly at random for the given seed, go to test.
/// Throws ValidationError when a user has fewer than 3 records.
DatasetSplit split(const Corpus& corpus, std::uint64_t seed);

/// {"seed": n, "train": {user: [ids]}, "test": {user: [ids]}}
nlohmann::json split_manifest(const DatasetSplit& split);
/// Rebuilds a split from a manifest and the corpus it was made from.
DatasetSplit split_from_manifest(const nlohmann::json& manifest, const Corpus& corpus);

/// Append-only record log plus a derived per-user index. When constructed
/// with a path, existing log lines are replayed and new records are
/// appended (and flushed) to that file.
class RecordStore {
 public:
  RecordStore() = default;
  explicit RecordStore(std::string log_path);

  RecordStore(const RecordStore&) = delete;
  RecordStore& operator=(const RecordStore&) = delete;

  /// Throws ValidationError / DuplicateError / Error (storage failure).
  std::string append(PromptRecord record);
  void ensure_user(const std::string& user_id);

  bool has_user(const std::string& user_id) const;
  bool contains(const std::string& record_id) const;
  std::optional<UserHistory> history(const std::string& user_id) const;
  std::size_t record_count() const;
  Corpus snapshot() const;

 private:
  mutable std::shared_mutex mu_;
  Corpus corpus_;
  std::string log_path_;
};

}  // namespace ppr
