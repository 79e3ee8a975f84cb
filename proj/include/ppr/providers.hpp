#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

namespace ppr {

struct EmbeddingVector {
  std::vector<double> values;

  std::size_t dim() const { return values.size(); }
  double norm() const;
};

/// Scales to unit L2 norm. Throws ValidationError for zero, empty or
/// non-finite vectors.
void normalize(EmbeddingVector& v);

/// Cosine similarity; throws ValidationError on dimension mismatch or zero norm.
double cosine(const EmbeddingVector& a, const EmbeddingVector& b);

struct GenerationParams {
  int steps = 50;
  double guidance = 7.0;
  std::string scheduler = "pndm";
  std::uint64_t seed = 0;

  void validate() const;
};

struct ImageRef {
  std::string image_id;
  std::string locator;
  /// Exact prompt the image was generated from.
  std::string provenance_prompt;
  /// Set when the prompt exceeded the generator's token budget.
  bool prompt_over_limit = false;

  bool operator==(const ImageRef&) const = default;
};

struct ChatResult {
  std::string text;
  bool truncated = false;
};

enum class ProviderKind { TextEmbed, ImageEmbed, Chat, Generate };
std::string_view to_string(ProviderKind kind);

/// Thread-safe per-provider call accounting.
class CallLog {
 public:
  struct Stats {
    std::uint64_t calls = 0;
    std::uint64_t failures = 0;
    std::uint64_t truncations = 0;
    std::uint64_t warnings = 0;
    double total_latency_ms = 0.0;
  };

  void record(ProviderKind kind, double latency_ms, bool ok, bool truncated = false, bool warning = false);
  Stats stats(ProviderKind kind) const;
  nlohmann::json to_json() const;

 private:
  mutable std::mutex mu_;
  std::map<ProviderKind, Stats> stats_;
};

/// Shared plumbing: every public call is timed and recorded in the attached log.
class ProviderBase {
 public:
  virtual ~ProviderBase() = default;
  void attach_log(std::shared_ptr<CallLog> log) { log_ = std::move(log); }

 protected:
  template <typename F>
  auto timed(ProviderKind kind, F&& f) -> decltype(f());
  void note(ProviderKind kind, double ms, bool ok, bool truncated = false, bool warning = false) const {
    if (log_) log_->record(kind, ms, ok, truncated, warning);
  }

 private:
  std::shared_ptr<CallLog> log_;
};

class TextEmbedder : public ProviderBase {
 public:
  /// Unit-norm embedding. Throws ValidationError on empty text,
  /// ProviderError on backend failure.
  EmbeddingVector embed_text(std::string_view text);

 protected:
  virtual EmbeddingVector do_embed_text(std::string_view text) = 0;
};

class ImageEmbedder : public ProviderBase {
 public:
  EmbeddingVector embed_image(const ImageRef& image);

 protected:
  virtual EmbeddingVector do_embed_image(const ImageRef& image) = 0;
};

class ChatModel : public ProviderBase {
 public:
  ChatResult complete(std::string_view prompt, std::uint64_t seed);

 protected:
  virtual ChatResult do_complete(std::string_view prompt, std::uint64_t seed) = 0;
};

class ImageGenerator : public ProviderBase {
 public:
  ImageRef generate(std::string_view prompt, const GenerationParams& params);

 protected:
  virtual ImageRef do_generate(std::string_view prompt, const GenerationParams& params) = 0;
};

// ---------------------------------------------------------------------------
// Deterministic local mocks

/// Feature hashing: each token adds 1 to bucket hash(token, seed) mod dim.
class MockTextEmbedder : public TextEmbedder {
 public:
  static constexpr std::size_t kDefaultDim = 256;
  static constexpr std::uint64_t kDefaultSeed = 0x5eed0f7e47ULL;

  explicit MockTextEmbedder(std::size_t dim = kDefaultDim, std::uint64_t seed = kDefaultSeed)
      : dim_(dim), seed_(seed) {}

  std::size_t bucket(std::string_view token) const;
  std::size_t dim() const { return dim_; }

 protected:
  EmbeddingVector do_embed_text(std::string_view text) override;

 private:
  std::size_t dim_;
  std::uint64_t seed_;
};

/// Embeds the image's provenance prompt with the given text embedder, so
/// text and image vectors share one space.
class MockImageEmbedder : public ImageEmbedder {
 public:
  explicit MockImageEmbedder(std::shared_ptr<TextEmbedder> text) : text_(std::move(text)) {}

 protected:
  EmbeddingVector do_embed_image(const ImageRef& image) override;

 private:
  std::shared_ptr<TextEmbedder> text_;
};

/// Template-aware surrogate for an LLM rewriter:
///  - rewriting templates: appends the 5 most frequent non-stopword history
///    tokens that are absent from the current prompt;
///  - preference template: answers the 5 most frequent non-stopword tokens,
///    comma separated;
///  - general rewriting: returns the input prompt;
///  - shortening: returns the first clause;
///  - anything else: echoes the trimmed request.
class MockChatModel : public ChatModel {
 public:
  explicit MockChatModel(std::size_t max_chars = 4000) : max_chars_(max_chars) {}

 protected:
  ChatResult do_complete(std::string_view prompt, std::uint64_t seed) override;

 private:
  std::size_t max_chars_;
};

class MockImageGenerator : public ImageGenerator {
 public:
  explicit MockImageGenerator(std::size_t max_prompt_words = 75) : max_prompt_words_(max_prompt_words) {}

 protected:
  ImageRef do_generate(std::string_view prompt, const GenerationParams& params) override;

 private:
  std::size_t max_prompt_words_;
};

/// Memoizes another embedder (thread-safe); used by batch evaluation.
class CachingTextEmbedder : public TextEmbedder {
 public:
  explicit CachingTextEmbedder(std::shared_ptr<TextEmbedder> inner) : inner_(std::move(inner)) {}

 protected:
  EmbeddingVector do_embed_text(std::string_view text) override;

 private:
  std::shared_ptr<TextEmbedder> inner_;
  std::mutex mu_;
  std::unordered_map<std::string, EmbeddingVector> cache_;
};

// ---------------------------------------------------------------------------
// Remote JSON-over-HTTP clients

struct HttpEndpoint {
  std::string url;  // e.g. "http://127.0.0.1:9000" (a path prefix is allowed)
  int timeout_ms = 30000;
  int max_retries = 2;  // for idempotent calls
  int max_in_flight = 8;
  std::string bearer_token;
};

/// Posts JSON with retry, timeout and an in-flight limit.
class HttpJsonClient {
 public:
  explicit HttpJsonClient(HttpEndpoint endpoint);

  /// `retries` is the number of additional attempts after a retryable
  /// failure. Throws ProviderError.
  nlohmann::json post(const std::string& path, const nlohmann::json& body, int retries);

  const HttpEndpoint& endpoint() const { return endpoint_; }

 private:
  HttpEndpoint endpoint_;
  std::string host_;
  std::string prefix_;
  std::mutex mu_;
  std::condition_variable cv_;
  int in_flight_ = 0;
};

/// POST /embed/text {text} -> {vector: [f]}
class RemoteTextEmbedder : public TextEmbedder {
 public:
  explicit RemoteTextEmbedder(HttpEndpoint endpoint, std::optional<std::size_t> expected_dim = std::nullopt);

 protected:
  EmbeddingVector do_embed_text(std::string_view text) override;

 private:
  HttpJsonClient client_;
  std::optional<std::size_t> expected_dim_;
};

/// POST /embed/image {image_ref} -> {vector: [f]}
class RemoteImageEmbedder : public ImageEmbedder {
 public:
  explicit RemoteImageEmbedder(HttpEndpoint endpoint, std::optional<std::size_t> expected_dim = std::nullopt);

 protected:
  EmbeddingVector do_embed_image(const ImageRef& image) override;

 private:
  HttpJsonClient client_;
  std::optional<std::size_t> expected_dim_;
};

/// POST /chat {prompt, seed} -> {text}
class RemoteChatModel : public ChatModel {
 public:
  explicit RemoteChatModel(HttpEndpoint endpoint, std::size_t max_chars = 4000);

 protected:
  ChatResult do_complete(std::string_view prompt, std::uint64_t seed) override;

 private:
  HttpJsonClient client_;
  std::size_t max_chars_;
};

/// POST /t2i {prompt, steps, guidance, scheduler, seed} -> {image_id, locator}
class RemoteImageGenerator : public ImageGenerator {
 public:
  /// Generation is not idempotent; `max_retries` bounds re-posts.
  explicit RemoteImageGenerator(HttpEndpoint endpoint, int max_retries = 0, std::size_t max_prompt_words = 75);

 protected:
  ImageRef do_generate(std::string_view prompt, const GenerationParams& params) override;

 private:
  HttpJsonClient client_;
  int max_retries_;
  std::size_t max_prompt_words_;
};

// ---------------------------------------------------------------------------

struct ProviderSet {
  std::shared_ptr<TextEmbedder> text;
  std::shared_ptr<ImageEmbedder> image;
  std::shared_ptr<ChatModel> chat;
  std::shared_ptr<ImageGenerator> generator;
  std::shared_ptr<CallLog> log;
};

ProviderSet make_mock_providers();

/// Provider selection: for each of "text_embed", "image_embed", "chat",
/// "t2i" an object {"kind": "mock"|"remote", "url", "timeout_ms",
/// "max_retries", "max_in_flight", "token_env"}. Missing entries are mocks.
/// Environment overrides: PPR_TEXT_EMBED_URL, PPR_IMAGE_EMBED_URL,
/// PPR_CHAT_URL, PPR_T2I_URL switch that provider to remote; PPR_API_TOKEN
/// supplies a bearer token.
ProviderSet make_providers(const nlohmann::json& config);

template <typename F>
auto ProviderBase::timed(ProviderKind kind, F&& f) -> decltype(f()) {
  auto start = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  };
  try {
    auto result = f();
    note(kind, elapsed(), true);
    return result;
  } catch (...) {
    note(kind, elapsed(), false);
    throw;
  }
}

}  // namespace ppr
