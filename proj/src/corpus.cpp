#include "ppr/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <tuple>

#include "ppr/error.hpp"
#include "ppr/text.hpp"
#include "ppr/util.hpp"

namespace ppr {

using nlohmann::json;

bool PromptRecord::operator==(const PromptRecord& o) const {
  return record_id == o.record_id && user_id == o.user_id && prompt_text == o.prompt_text &&
         image_ref == o.image_ref && image_width == o.image_width && image_height == o.image_height &&
         created_at == o.created_at && source_url == o.source_url;
}

void validate(const PromptRecord& r) {
  if (r.record_id.empty()) throw ValidationError("record_id is empty");
  if (r.user_id.empty()) throw ValidationError("user_id is empty");
  if (trim(r.prompt_text).empty()) throw ValidationError("prompt is empty");
  if (r.image_width && *r.image_width <= 0) throw ValidationError("width must be positive");
  if (r.image_height && *r.image_height <= 0) throw ValidationError("height must be positive");
  if (r.created_at && !parse_timestamp_ms(*r.created_at)) {
    throw ValidationError("created_at is not an ISO-8601 timestamp: " + *r.created_at);
  }
}

namespace {

// Days since 1970-01-01 for a proleptic Gregorian date.
std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

bool read_int(std::string_view s, std::size_t pos, std::size_t len, int& out) {
  if (pos + len > s.size()) return false;
  for (std::size_t i = pos; i < pos + len; ++i) {
    if (s[i] < '0' || s[i] > '9') return false;
  }
  auto res = std::from_chars(s.data() + pos, s.data() + pos + len, out);
  return res.ec == std::errc();
}

}  // namespace

std::optional<std::int64_t> parse_timestamp_ms(std::string_view s) {
  int year, month, day;
  if (!read_int(s, 0, 4, year) || s.size() < 10 || s[4] != '-' || !read_int(s, 5, 2, month) || s[7] != '-' ||
      !read_int(s, 8, 2, day)) {
    return std::nullopt;
  }
  if (month < 1 || month > 12 || day < 1 || day > 31) return std::nullopt;
  std::int64_t ms = days_from_civil(year, static_cast<unsigned>(month), static_cast<unsigned>(day)) * 86400000LL;
  if (s.size() == 10) return ms;

  if (s[10] != 'T' && s[10] != ' ') return std::nullopt;
  int hh, mm, ss = 0;
  if (!read_int(s, 11, 2, hh) || s.size() < 16 || s[13] != ':' || !read_int(s, 14, 2, mm)) return std::nullopt;
  std::size_t pos = 16;
  if (pos < s.size() && s[pos] == ':') {
    if (!read_int(s, pos + 1, 2, ss)) return std::nullopt;
    pos += 3;
  }
  if (hh > 23 || mm > 59 || ss > 60) return std::nullopt;
  ms += (hh * 3600LL + mm * 60LL + ss) * 1000LL;
  if (pos < s.size() && s[pos] == '.') {
    ++pos;
    std::int64_t frac = 0;
    int digits = 0;
    while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') {
      if (digits < 3) {
        frac = frac * 10 + (s[pos] - '0');
        ++digits;
      }
      ++pos;
    }
    if (digits == 0) return std::nullopt;
    while (digits < 3) {
      frac *= 10;
      ++digits;
    }
    ms += frac;
  }
  if (pos == s.size()) return ms;  // no zone: treated as UTC
  if (s[pos] == 'Z' && pos + 1 == s.size()) return ms;
  if (s[pos] == '+' || s[pos] == '-') {
    int oh, om = 0;
    if (!read_int(s, pos + 1, 2, oh)) return std::nullopt;
    std::size_t p = pos + 3;
    if (p < s.size() && s[p] == ':') ++p;
    if (p < s.size()) {
      if (!read_int(s, p, 2, om)) return std::nullopt;
      p += 2;
    }
    if (p != s.size()) return std::nullopt;
    std::int64_t offset = (oh * 60LL + om) * 60000LL;
    return s[pos] == '+' ? ms - offset : ms + offset;
  }
  return std::nullopt;
}

json to_json(const PromptRecord& r) {
  json j;
  j["record_id"] = r.record_id;
  j["user_id"] = r.user_id;
  j["prompt"] = r.prompt_text;
  j["image_ref"] = r.image_ref ? json(*r.image_ref) : json(nullptr);
  j["width"] = r.image_width ? json(*r.image_width) : json(nullptr);
  j["height"] = r.image_height ? json(*r.image_height) : json(nullptr);
  j["created_at"] = r.created_at ? json(*r.created_at) : json(nullptr);
  j["source_url"] = r.source_url ? json(*r.source_url) : json(nullptr);
  return j;
}

namespace {

std::string required_string(const json& j, const char* field) {
  auto it = j.find(field);
  if (it == j.end() || it->is_null()) throw ValidationError(std::string("missing required field '") + field + "'");
  if (!it->is_string()) throw ValidationError(std::string("field '") + field + "' must be a string");
  return it->get<std::string>();
}

std::optional<std::string> optional_string(const json& j, const char* field) {
  auto it = j.find(field);
  if (it == j.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) throw ValidationError(std::string("field '") + field + "' must be a string or null");
  return it->get<std::string>();
}

std::optional<int> optional_int(const json& j, const char* field) {
  auto it = j.find(field);
  if (it == j.end() || it->is_null()) return std::nullopt;
  if (!it->is_number_integer()) throw ValidationError(std::string("field '") + field + "' must be an integer or null");
  return it->get<int>();
}

}  // namespace

PromptRecord record_from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("record must be a JSON object");
  PromptRecord r;
  r.record_id = required_string(j, "record_id");
  r.user_id = required_string(j, "user_id");
  r.prompt_text = required_string(j, "prompt");
  r.image_ref = optional_string(j, "image_ref");
  r.image_width = optional_int(j, "width");
  r.image_height = optional_int(j, "height");
  r.created_at = optional_string(j, "created_at");
  r.source_url = optional_string(j, "source_url");
  validate(r);
  if (r.created_at) r.created_ms = parse_timestamp_ms(*r.created_at);
  return r;
}

bool history_before(const PromptRecord& a, const PromptRecord& b) {
  auto key = [](const PromptRecord& r) {
    const bool has_ts = r.created_ms.has_value();
    return std::make_tuple(has_ts, r.created_ms.value_or(0), has_ts ? std::uint64_t{0} : r.sequence);
  };
  auto ka = key(a);
  auto kb = key(b);
  if (ka != kb) return ka < kb;
  return a.record_id < b.record_id;
}

const PromptRecord* UserHistory::find(std::string_view record_id) const {
  for (const auto& r : records) {
    if (r.record_id == record_id) return &r;
  }
  return nullptr;
}

std::vector<std::string> UserHistory::prompts() const {
  std::vector<std::string> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.prompt_text);
  return out;
}

std::size_t distinct_prompt_count(const std::vector<std::string>& prompts) {
  std::unordered_set<std::string> seen;
  for (const auto& p : prompts) seen.insert(normalize_prompt(p));
  return seen.size();
}

std::size_t distinct_prompt_count(const UserHistory& history) { return distinct_prompt_count(history.prompts()); }

void Corpus::add(PromptRecord record) {
  validate(record);
  if (record.created_at && !record.created_ms) record.created_ms = parse_timestamp_ms(*record.created_at);
  if (ids_.count(record.record_id)) throw DuplicateError("duplicate record_id: " + record.record_id);
  record.sequence = next_sequence_++;
  auto& history = users_[record.user_id];
  history.user_id = record.user_id;
  ids_.insert(record.record_id);
  auto pos = std::upper_bound(history.records.begin(), history.records.end(), record, history_before);
  history.records.insert(pos, std::move(record));
}

void Corpus::add_user(const std::string& user_id) {
  if (user_id.empty()) throw ValidationError("user_id is empty");
  users_[user_id].user_id = user_id;
}

const UserHistory* Corpus::find_user(std::string_view user_id) const {
  auto it = users_.find(std::string(user_id));
  return it == users_.end() ? nullptr : &it->second;
}

IngestResult ingest_jsonl(std::istream& in, const IngestOptions& options) {
  IngestResult result;
  std::map<std::string, std::vector<PromptRecord>> by_user;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  std::uint64_t sequence = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(lineno, std::string("malformed JSON: ") + e.what());
    }
    PromptRecord r;
    try {
      r = record_from_json(j);
    } catch (const ValidationError& e) {
      throw ParseError(lineno, e.what());
    }
    if (!seen.insert(r.record_id).second) {
      throw DuplicateError("line " + std::to_string(lineno) + ": duplicate record_id: " + r.record_id);
    }
    r.sequence = sequence++;
    by_user[r.user_id].push_back(std::move(r));
  }
  result.summary.lines = lineno;

  for (auto& [user, records] : by_user) {
    std::vector<std::string> prompts;
    prompts.reserve(records.size());
    for (const auto& r : records) prompts.push_back(r.prompt_text);
    if (records.size() < options.min_images || distinct_prompt_count(prompts) < options.min_distinct_prompts) {
      ++result.summary.users_dropped;
      result.summary.records_dropped += records.size();
      continue;
    }
    ++result.summary.users_kept;
    result.summary.records_kept += records.size();
    for (auto& r : records) result.corpus.add(std::move(r));
  }
  return result;
}

IngestResult ingest_jsonl(const std::string& path, const IngestOptions& options) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("cannot open " + path);
  return ingest_jsonl(in, options);
}

void export_jsonl(const Corpus& corpus, std::ostream& out) {
  for (const auto& [_, history] : corpus.users()) {
    for (const auto& r : history.records) out << to_json(r).dump() << '\n';
  }
}

std::size_t DatasetSplit::train_size() const {
  std::size_t n = 0;
  for (const auto& [_, v] : train) n += v.size();
  return n;
}

std::size_t DatasetSplit::test_size() const {
  std::size_t n = 0;
  for (const auto& [_, v] : test) n += v.size();
  return n;
}

std::set<std::string> DatasetSplit::test_ids(const std::string& user_id) const {
  std::set<std::string> ids;
  auto it = test.find(user_id);
  if (it != test.end()) {
    for (const auto& r : it->second) ids.insert(r.record_id);
  }
  return ids;
}

DatasetSplit split(const Corpus& corpus, std::uint64_t seed) {
  DatasetSplit out;
  out.seed = seed;
  for (const auto& [user, history] : corpus.users()) {
    if (history.size() < 3) {
      throw ValidationError("split: user " + user + " has " + std::to_string(history.size()) +
                            " records; at least 3 are required");
    }
    Rng rng(stable_hash({"split", user}, seed));
    auto picked = sample_indices(rng, history.size(), 2);
    std::sort(picked.begin(), picked.end());
    auto& train = out.train[user];
    auto& test = out.test[user];
    for (std::size_t i = 0; i < history.size(); ++i) {
      if (std::binary_search(picked.begin(), picked.end(), i))
        test.push_back(history.records[i]);
      else
        train.push_back(history.records[i]);
    }
  }
  return out;
}

json split_manifest(const DatasetSplit& s) {
  json j;
  j["seed"] = s.seed;
  json train = json::object();
  json test = json::object();
  for (const auto& [user, records] : s.train) {
    json ids = json::array();
    for (const auto& r : records) ids.push_back(r.record_id);
    train[user] = std::move(ids);
  }
  for (const auto& [user, records] : s.test) {
    json ids = json::array();
    for (const auto& r : records) ids.push_back(r.record_id);
    test[user] = std::move(ids);
  }
  j["train"] = std::move(train);
  j["test"] = std::move(test);
  return j;
}

DatasetSplit split_from_manifest(const json& manifest, const Corpus& corpus) {
  DatasetSplit out;
  out.seed = manifest.at("seed").get<std::uint64_t>();
  auto load = [&](const char* key, std::map<std::string, std::vector<PromptRecord>>& dest) {
    for (const auto& [user, ids] : manifest.at(key).items()) {
      const UserHistory* h = corpus.find_user(user);
      if (!h) throw NotFoundError("manifest user not in corpus: " + user);
      auto& list = dest[user];
      for (const auto& id : ids) {
        const PromptRecord* r = h->find(id.get<std::string>());
        if (!r) throw NotFoundError("manifest record not in corpus: " + id.get<std::string>());
        list.push_back(*r);
      }
    }
  };
  load("train", out.train);
  load("test", out.test);
  return out;
}

RecordStore::RecordStore(std::string log_path) : log_path_(std::move(log_path)) {
  std::ifstream in(log_path_);
  if (!in) return;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      corpus_.add(record_from_json(json::parse(line)));
    } catch (const json::parse_error& e) {
      throw ParseError(lineno, std::string("record log: ") + e.what());
    }
  }
}

std::string RecordStore::append(PromptRecord record) {
  validate(record);
  std::unique_lock lock(mu_);
  if (corpus_.contains_record(record.record_id)) {
    throw DuplicateError("duplicate record_id: " + record.record_id);
  }
  if (!log_path_.empty()) {
    std::ofstream out(log_path_, std::ios::app);
    out << to_json(record).dump() << '\n';
    out.flush();
    if (!out) throw Error("record log write failed: " + log_path_);
  }
  std::string id = record.record_id;
  corpus_.add(std::move(record));
  return id;
}

void RecordStore::ensure_user(const std::string& user_id) {
  std::unique_lock lock(mu_);
  corpus_.add_user(user_id);
}

bool RecordStore::has_user(const std::string& user_id) const {
  std::shared_lock lock(mu_);
  return corpus_.find_user(user_id) != nullptr;
}

bool RecordStore::contains(const std::string& record_id) const {
  std::shared_lock lock(mu_);
  return corpus_.contains_record(record_id);
}

std::optional<UserHistory> RecordStore::history(const std::string& user_id) const {
  std::shared_lock lock(mu_);
  const UserHistory* h = corpus_.find_user(user_id);
  if (!h) return std::nullopt;
  return *h;
}

std::size_t RecordStore::record_count() const {
  std::shared_lock lock(mu_);
  return corpus_.record_count();
}

Corpus RecordStore::snapshot() const {
  std::shared_lock lock(mu_);
  return corpus_;
}

}  // namespace ppr
