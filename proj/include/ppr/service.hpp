#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "ppr/corpus.hpp"
#include "ppr/providers.hpp"
#include "ppr/rewrite.hpp"
#include "ppr/text.hpp"

namespace httplib {
class Server;
}

namespace ppr {

enum class Arm { Original, Personalized };
std::string_view to_string(Arm arm);
Arm parse_arm(std::string_view name);

/// Deterministic fair coin over (experiment_seed, user_id, request_id).
Arm assign_arm(std::string_view user_id, std::string_view request_id, std::uint64_t experiment_seed);

enum class FeedbackAction { Save, Delete };
std::string_view to_string(FeedbackAction action);
FeedbackAction parse_feedback_action(std::string_view name);

/// Server-side record of one generation; never sent to clients as-is.
struct GenerationEntry {
  std::string image_id;
  std::string user_id;
  std::string request_id;
  std::string prompt;  // as entered by the user
  std::string rewritten;
  Arm arm = Arm::Original;
  std::string locator;
  std::string blinded_token;
  std::int64_t created_ms = 0;
};

struct FeedbackEvent {
  std::string image_id;
  FeedbackAction action = FeedbackAction::Save;
  Arm arm = Arm::Original;
  std::string user_id;
  std::int64_t timestamp_ms = 0;
};

struct ArmStats {
  std::size_t images_generated = 0;
  std::size_t saves = 0;
  std::size_t deletes = 0;
  double save_rate = 0.0;
};

struct AbReport {
  ArmStats original;
  ArmStats personalized;
  /// rate_P - rate_O; null until both arms have generations.
  std::optional<double> absolute_diff;
  /// (rate_P - rate_O) / rate_O; null while rate_O is 0.
  std::optional<double> relative_improvement;

  std::size_t total_generations() const { return original.images_generated + personalized.images_generated; }
  nlohmann::json to_json() const;
};

/// Generation and feedback logs with first-wins feedback. When paths are
/// given, existing entries are replayed and new ones appended.
class AbLedger {
 public:
  AbLedger() = default;
  AbLedger(std::string generations_path, std::string feedback_path);

  AbLedger(const AbLedger&) = delete;
  AbLedger& operator=(const AbLedger&) = delete;

  /// Throws DuplicateError on a repeated image_id.
  void record_generation(const GenerationEntry& entry);
  /// Throws NotFoundError for unknown ids, DuplicateError when feedback exists.
  FeedbackEvent record_feedback(const std::string& image_id, FeedbackAction action, std::int64_t timestamp_ms);

  std::optional<GenerationEntry> generation(const std::string& image_id) const;
  std::vector<GenerationEntry> generations() const;
  std::vector<FeedbackEvent> feedback() const;
  AbReport report() const;

 private:
  mutable std::mutex mu_;
  std::map<std::string, GenerationEntry> generations_;
  std::vector<std::string> generation_order_;
  std::map<std::string, FeedbackEvent> feedback_;
  std::vector<std::string> feedback_order_;
  std::string generations_path_;
  std::string feedback_path_;
};

struct ServiceOptions {
  /// Holds records.jsonl, generations.jsonl and feedback.jsonl; empty = in memory.
  std::string state_dir;
  std::uint64_t experiment_seed = 0;
  std::uint64_t seed = 0;
  std::size_t k = 3;
  int shots = 1;
  RetrievalMethod retriever = RetrievalMethod::EBR;
  GenerationParams generation;
  std::size_t page_size = 20;
  std::size_t preference_refresh = 10;
  bool drop_stopwords_in_keywords = true;
};

/// Client-visible result of a generation.
struct GenerateResponse {
  std::string image_id;
  std::string locator;
  std::string blinded_token;

  nlohmann::json to_json() const;
};

struct HistoryPage {
  std::string user_id;
  std::size_t page = 1;
  std::size_t page_size = 20;
  std::size_t total = 0;
  std::size_t pages = 0;
  std::vector<PromptRecord> records;  // newest first

  nlohmann::json to_json() const;
};

class Service {
 public:
  Service(ProviderSet providers, ServiceOptions options = {}, std::vector<DemoExample> demo_pool = builtin_demo_pool(),
          Templates templates = Templates::builtin());

  /// Loads records not yet present in the store (used to seed histories).
  std::size_t import_corpus(const Corpus& corpus);

  /// request_id defaults to a fresh id. Throws ValidationError on an empty
  /// prompt, ProviderError when rewriting or generation fails.
  GenerateResponse generate(const std::string& user_id, const std::string& prompt,
                            std::optional<std::string> request_id = std::nullopt);
  FeedbackEvent feedback(const std::string& image_id, FeedbackAction action);
  AbReport report() const { return ledger_.report(); }

  /// Pages are 1-based. Throws NotFoundError for unknown users.
  HistoryPage history(const std::string& user_id, std::size_t page) const;
  /// Empty phrases when the user has no history yet.
  UserPreference preference(const std::string& user_id);
  std::vector<KeywordWeight> keywords(long n) const;

  const AbLedger& ledger() const { return ledger_; }
  const RecordStore& store() const { return store_; }
  const ServiceOptions& options() const { return options_; }

 private:
  std::string fresh_id(std::string_view prefix);

  ServiceOptions options_;
  Rewriter rewriter_;
  RecordStore store_;
  AbLedger ledger_;

  std::mutex rng_mu_;
  std::mt19937_64 rng_;

  struct CachedPreference {
    UserPreference preference;
    std::size_t history_size = 0;
  };
  std::mutex pref_mu_;
  std::map<std::string, CachedPreference> preferences_;
};

/// JSON HTTP front end for a Service.
class HttpServer {
 public:
  explicit HttpServer(Service& service);
  ~HttpServer();

  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds (port 0 picks a free port), serves on a background thread and
  /// returns the bound port.
  int start(const std::string& host, int port);
  /// Binds and serves on the calling thread until stop().
  void run(const std::string& host, int port);
  /// Blocks until a server started with start() stops.
  void wait();
  void stop();

 private:
  void install_routes();

  Service& service_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
};

}  // namespace ppr
