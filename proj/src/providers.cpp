#include "ppr/providers.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <sstream>
#include <thread>
#include <unordered_set>

#include <httplib.h>

#include "ppr/error.hpp"
#include "ppr/text.hpp"
#include "ppr/util.hpp"

namespace ppr {

using nlohmann::json;

double EmbeddingVector::norm() const {
  double s = 0;
  for (double v : values) s += v * v;
  return std::sqrt(s);
}

void normalize(EmbeddingVector& v) {
  if (v.values.empty()) throw ValidationError("embedding is empty");
  for (double x : v.values) {
    if (!std::isfinite(x)) throw ValidationError("embedding has a non-finite value");
  }
  double n = v.norm();
  if (!(n > 0.0)) throw ValidationError("embedding has zero norm");
  for (double& x : v.values) x /= n;
}

double cosine(const EmbeddingVector& a, const EmbeddingVector& b) {
  if (a.dim() != b.dim()) {
    throw ValidationError("cosine: dimension mismatch " + std::to_string(a.dim()) + " vs " + std::to_string(b.dim()));
  }
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.dim(); ++i) {
    dot += a.values[i] * b.values[i];
    na += a.values[i] * a.values[i];
    nb += b.values[i] * b.values[i];
  }
  if (!(na > 0.0) || !(nb > 0.0)) throw ValidationError("cosine: zero-norm vector");
  double c = dot / (std::sqrt(na) * std::sqrt(nb));
  return std::clamp(c, -1.0, 1.0);
}

void GenerationParams::validate() const {
  if (steps < 1) throw ValidationError("generation steps must be >= 1");
  if (!(guidance >= 0.0)) throw ValidationError("guidance scale must be >= 0");
  if (scheduler.empty()) throw ValidationError("scheduler is empty");
}

std::string_view to_string(ProviderKind kind) {
  switch (kind) {
    case ProviderKind::TextEmbed:
      return "text_embed";
    case ProviderKind::ImageEmbed:
      return "image_embed";
    case ProviderKind::Chat:
      return "chat";
    case ProviderKind::Generate:
      return "t2i";
  }
  return "unknown";
}

void CallLog::record(ProviderKind kind, double latency_ms, bool ok, bool truncated, bool warning) {
  std::lock_guard lock(mu_);
  auto& s = stats_[kind];
  ++s.calls;
  if (!ok) ++s.failures;
  if (truncated) ++s.truncations;
  if (warning) ++s.warnings;
  s.total_latency_ms += latency_ms;
}

CallLog::Stats CallLog::stats(ProviderKind kind) const {
  std::lock_guard lock(mu_);
  auto it = stats_.find(kind);
  return it == stats_.end() ? Stats{} : it->second;
}

json CallLog::to_json() const {
  std::lock_guard lock(mu_);
  json j = json::object();
  for (const auto& [kind, s] : stats_) {
    j[std::string(ppr::to_string(kind))] = {{"calls", s.calls},
                                            {"failures", s.failures},
                                            {"truncations", s.truncations},
                                            {"warnings", s.warnings},
                                            {"total_latency_ms", s.total_latency_ms}};
  }
  return j;
}

// ---------------------------------------------------------------------------

namespace {

double ms_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

EmbeddingVector TextEmbedder::embed_text(std::string_view text) {
  if (trim(text).empty()) throw ValidationError("embed_text: text is empty");
  return timed(ProviderKind::TextEmbed, [&] {
    EmbeddingVector v = do_embed_text(text);
    normalize(v);
    return v;
  });
}

EmbeddingVector ImageEmbedder::embed_image(const ImageRef& image) {
  return timed(ProviderKind::ImageEmbed, [&] {
    EmbeddingVector v = do_embed_image(image);
    normalize(v);
    return v;
  });
}

ChatResult ChatModel::complete(std::string_view prompt, std::uint64_t seed) {
  if (trim(prompt).empty()) throw ValidationError("chat: prompt is empty");
  auto start = std::chrono::steady_clock::now();
  try {
    ChatResult r = do_complete(prompt, seed);
    note(ProviderKind::Chat, ms_since(start), true, r.truncated);
    return r;
  } catch (...) {
    note(ProviderKind::Chat, ms_since(start), false);
    throw;
  }
}

ImageRef ImageGenerator::generate(std::string_view prompt, const GenerationParams& params) {
  if (trim(prompt).empty()) throw ValidationError("generate: prompt is empty");
  params.validate();
  auto start = std::chrono::steady_clock::now();
  try {
    ImageRef r = do_generate(prompt, params);
    r.provenance_prompt = std::string(prompt);
    note(ProviderKind::Generate, ms_since(start), true, false, r.prompt_over_limit);
    return r;
  } catch (...) {
    note(ProviderKind::Generate, ms_since(start), false);
    throw;
  }
}

// ---------------------------------------------------------------------------
// Mocks

std::size_t MockTextEmbedder::bucket(std::string_view token) const {
  return static_cast<std::size_t>(stable_hash({token}, seed_) % dim_);
}

EmbeddingVector MockTextEmbedder::do_embed_text(std::string_view text) {
  EmbeddingVector v;
  v.values.assign(dim_, 0.0);
  TokenStream tokens = tokenize(text);
  if (tokens.empty()) tokens.push_back(trim(text));  // punctuation-only text still maps somewhere
  for (const auto& t : tokens) v.values[bucket(t)] += 1.0;
  return v;
}

EmbeddingVector MockImageEmbedder::do_embed_image(const ImageRef& image) {
  if (trim(image.provenance_prompt).empty()) {
    throw NotFoundError("image not found: " + (image.image_id.empty() ? image.locator : image.image_id));
  }
  return text_->embed_text(image.provenance_prompt);
}

namespace {

constexpr std::string_view kHistoryMarker = "The history prompts are:";
constexpr std::string_view kCurrentMarker = "The current prompt is:";
constexpr std::string_view kInputMarker = "The input prompt is:";
constexpr std::string_view kUserHistoryMarker = "The history prompts of a user:";
constexpr std::string_view kPreferenceTail = "The keywords of the user's preference:";
constexpr std::string_view kShortenMarker = "The prompt is:";

std::string line_after(std::string_view text, std::size_t pos) {
  auto end = text.find('\n', pos);
  return trim(text.substr(pos, end == std::string_view::npos ? std::string_view::npos : end - pos));
}

// Drops "1. " style list numbering from the start of each line.
std::string strip_numbering(std::string_view block) {
  std::string out;
  std::istringstream in{std::string(block)};
  std::string line;
  while (std::getline(in, line)) {
    std::string t = trim(line);
    std::size_t i = 0;
    while (i < t.size() && t[i] >= '0' && t[i] <= '9') ++i;
    if (i > 0 && i < t.size() && t[i] == '.') t = trim(std::string_view(t).substr(i + 1));
    out += t;
    out += '\n';
  }
  return out;
}

std::vector<std::string> frequent_terms(std::string_view block, const std::unordered_set<std::string>& skip,
                                        std::size_t limit) {
  const Lexicon& lex = Lexicon::builtin();
  TokenStream tokens = tokenize(strip_numbering(block));
  std::unordered_map<std::string, std::pair<std::size_t, std::size_t>> stats;  // count, first position
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto& t = tokens[i];
    if (lex.is_stopword(t) || skip.count(t)) continue;
    auto [it, inserted] = stats.try_emplace(t, 0, i);
    ++it->second.first;
  }
  std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>> ranked(stats.begin(), stats.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second.first != b.second.first) return a.second.first > b.second.first;
    return a.second.second < b.second.second;
  });
  std::vector<std::string> out;
  for (std::size_t i = 0; i < ranked.size() && i < limit; ++i) out.push_back(ranked[i].first);
  return out;
}

}  // namespace

ChatResult MockChatModel::do_complete(std::string_view prompt, std::uint64_t) {
  std::string reply;
  auto hist = prompt.rfind(kHistoryMarker);
  auto user_hist = prompt.rfind(kUserHistoryMarker);
  if (hist != std::string_view::npos) {
    auto cur = prompt.find(kCurrentMarker, hist);
    std::string current = cur == std::string_view::npos ? std::string() : line_after(prompt, cur + kCurrentMarker.size());
    auto block_end = cur == std::string_view::npos ? prompt.size() : cur;
    std::string_view block = prompt.substr(hist + kHistoryMarker.size(), block_end - hist - kHistoryMarker.size());
    TokenStream own = tokenize(current);
    std::unordered_set<std::string> skip(own.begin(), own.end());
    auto extra = frequent_terms(block, skip, 5);
    reply = current;
    if (!extra.empty()) reply += (reply.empty() ? "" : " ") + join(extra, " ");
  } else if (user_hist != std::string_view::npos) {
    auto tail = prompt.find(kPreferenceTail, user_hist);
    auto end = tail == std::string_view::npos ? prompt.size() : tail;
    std::string_view block = prompt.substr(user_hist + kUserHistoryMarker.size(), end - user_hist - kUserHistoryMarker.size());
    reply = join(frequent_terms(block, {}, 5), ", ");
  } else if (auto in = prompt.rfind(kInputMarker); in != std::string_view::npos) {
    reply = line_after(prompt, in + kInputMarker.size());
  } else if (auto sh = prompt.rfind(kShortenMarker); sh != std::string_view::npos) {
    reply = first_clause(line_after(prompt, sh + kShortenMarker.size()));
  } else {
    reply = trim(prompt);
  }
  ChatResult r{std::move(reply), false};
  if (r.text.size() > max_chars_) {
    r.text.resize(max_chars_);
    r.truncated = true;
  }
  return r;
}

ImageRef MockImageGenerator::do_generate(std::string_view prompt, const GenerationParams& params) {
  std::ostringstream g;
  g.precision(17);
  g << params.guidance;
  std::uint64_t h = stable_hash({prompt, params.scheduler, std::to_string(params.steps), g.str()}, params.seed);
  ImageRef ref;
  ref.image_id = "img-" + hex64(h);
  ref.locator = "mock://t2i/" + ref.image_id + ".png";
  ref.provenance_prompt = std::string(prompt);
  ref.prompt_over_limit = word_count(prompt) > max_prompt_words_;
  return ref;
}

EmbeddingVector CachingTextEmbedder::do_embed_text(std::string_view text) {
  std::string key(text);
  {
    std::lock_guard lock(mu_);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
  }
  EmbeddingVector v = inner_->embed_text(text);
  std::lock_guard lock(mu_);
  cache_.emplace(std::move(key), v);
  return v;
}

// ---------------------------------------------------------------------------
// Remote clients

HttpJsonClient::HttpJsonClient(HttpEndpoint endpoint) : endpoint_(std::move(endpoint)) {
  const std::string& url = endpoint_.url;
  auto scheme = url.find("://");
  if (scheme == std::string::npos) throw ValidationError("endpoint url needs a scheme: " + url);
  auto slash = url.find('/', scheme + 3);
  host_ = url.substr(0, slash);
  prefix_ = slash == std::string::npos ? "" : url.substr(slash);
  while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
  if (endpoint_.max_in_flight < 1) endpoint_.max_in_flight = 1;
}

json HttpJsonClient::post(const std::string& path, const json& body, int retries) {
  {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return in_flight_ < endpoint_.max_in_flight; });
    ++in_flight_;
  }
  struct Release {
    HttpJsonClient* self;
    ~Release() {
      {
        std::lock_guard lock(self->mu_);
        --self->in_flight_;
      }
      self->cv_.notify_one();
    }
  } release{this};

  httplib::Client cli(host_);
  auto timeout = std::chrono::milliseconds(endpoint_.timeout_ms);
  cli.set_connection_timeout(timeout);
  cli.set_read_timeout(timeout);
  cli.set_write_timeout(timeout);
  if (!endpoint_.bearer_token.empty()) cli.set_bearer_token_auth(endpoint_.bearer_token);

  const std::string payload = body.dump();
  const std::string full = prefix_ + path;
  for (int attempt = 0;; ++attempt) {
    bool retryable = true;
    int status = 0;
    std::string reason;
    auto res = cli.Post(full, payload, "application/json");
    if (!res) {
      reason = "request failed: " + httplib::to_string(res.error());
    } else {
      status = res->status;
      if (status >= 200 && status < 300) {
        try {
          return json::parse(res->body);
        } catch (const json::parse_error&) {
          throw ProviderError(host_ + full + ": response is not JSON", false, status);
        }
      }
      retryable = status >= 500 || status == 429 || status == 408;
      reason = "HTTP " + std::to_string(status);
    }
    if (!retryable || attempt >= retries) {
      throw ProviderError(host_ + full + ": " + reason, retryable, status);
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(50 * (attempt + 1)));
  }
}

namespace {

EmbeddingVector vector_from_response(const json& j, std::optional<std::size_t> expected_dim) {
  auto it = j.find("vector");
  if (it == j.end() || !it->is_array()) throw ProviderError("embedding response lacks a 'vector' array", false);
  EmbeddingVector v;
  v.values.reserve(it->size());
  for (const auto& x : *it) {
    if (!x.is_number()) throw ProviderError("embedding response has a non-numeric entry", false);
    v.values.push_back(x.get<double>());
  }
  if (expected_dim && v.dim() != *expected_dim) {
    throw ProviderError("embedding has dimension " + std::to_string(v.dim()) + ", expected " +
                            std::to_string(*expected_dim),
                        false);
  }
  try {
    normalize(v);
  } catch (const ValidationError& e) {
    throw ProviderError(std::string("invalid embedding: ") + e.what(), false);
  }
  return v;
}

}  // namespace

RemoteTextEmbedder::RemoteTextEmbedder(HttpEndpoint endpoint, std::optional<std::size_t> expected_dim)
    : client_(std::move(endpoint)), expected_dim_(expected_dim) {}

EmbeddingVector RemoteTextEmbedder::do_embed_text(std::string_view text) {
  json body = {{"text", std::string(text)}};
  return vector_from_response(client_.post("/embed/text", body, client_.endpoint().max_retries), expected_dim_);
}

RemoteImageEmbedder::RemoteImageEmbedder(HttpEndpoint endpoint, std::optional<std::size_t> expected_dim)
    : client_(std::move(endpoint)), expected_dim_(expected_dim) {}

EmbeddingVector RemoteImageEmbedder::do_embed_image(const ImageRef& image) {
  if (image.locator.empty()) throw NotFoundError("image has no locator: " + image.image_id);
  json body = {{"image_ref", image.locator}};
  return vector_from_response(client_.post("/embed/image", body, client_.endpoint().max_retries), expected_dim_);
}

RemoteChatModel::RemoteChatModel(HttpEndpoint endpoint, std::size_t max_chars)
    : client_(std::move(endpoint)), max_chars_(max_chars) {}

ChatResult RemoteChatModel::do_complete(std::string_view prompt, std::uint64_t seed) {
  json body = {{"prompt", std::string(prompt)}, {"seed", seed}};
  json j = client_.post("/chat", body, client_.endpoint().max_retries);
  auto it = j.find("text");
  if (it == j.end() || !it->is_string()) throw ProviderError("chat response lacks 'text'", false);
  ChatResult r{it->get<std::string>(), false};
  if (r.text.size() > max_chars_) {
    r.text.resize(max_chars_);
    r.truncated = true;
  }
  return r;
}

RemoteImageGenerator::RemoteImageGenerator(HttpEndpoint endpoint, int max_retries, std::size_t max_prompt_words)
    : client_(std::move(endpoint)), max_retries_(std::max(0, max_retries)), max_prompt_words_(max_prompt_words) {}

ImageRef RemoteImageGenerator::do_generate(std::string_view prompt, const GenerationParams& params) {
  json body = {{"prompt", std::string(prompt)},
               {"steps", params.steps},
               {"guidance", params.guidance},
               {"scheduler", params.scheduler},
               {"seed", params.seed}};
  json j = client_.post("/t2i", body, max_retries_);
  if (!j.contains("image_id") || !j["image_id"].is_string() || !j.contains("locator") || !j["locator"].is_string()) {
    throw ProviderError("t2i response lacks image_id/locator", false);
  }
  ImageRef ref;
  ref.image_id = j["image_id"].get<std::string>();
  ref.locator = j["locator"].get<std::string>();
  ref.provenance_prompt = std::string(prompt);
  ref.prompt_over_limit = word_count(prompt) > max_prompt_words_;
  return ref;
}

// ---------------------------------------------------------------------------

ProviderSet make_mock_providers() {
  ProviderSet p;
  p.log = std::make_shared<CallLog>();
  auto text = std::make_shared<MockTextEmbedder>();
  p.text = text;
  p.image = std::make_shared<MockImageEmbedder>(text);
  p.chat = std::make_shared<MockChatModel>();
  p.generator = std::make_shared<MockImageGenerator>();
  p.text->attach_log(p.log);
  p.image->attach_log(p.log);
  p.chat->attach_log(p.log);
  p.generator->attach_log(p.log);
  return p;
}

namespace {

struct Selection {
  bool remote = false;
  HttpEndpoint endpoint;
  std::optional<std::size_t> dim;
  int generation_retries = 0;
};

Selection select(const json& config, const char* key, const char* env_url) {
  Selection s;
  if (config.is_object() && config.contains(key)) {
    const json& c = config.at(key);
    std::string kind = c.value("kind", "mock");
    if (kind == "remote") {
      s.remote = true;
    } else if (kind != "mock") {
      throw ValidationError(std::string("provider '") + key + "': unknown kind " + kind);
    }
    s.endpoint.url = c.value("url", "");
    s.endpoint.timeout_ms = c.value("timeout_ms", s.endpoint.timeout_ms);
    s.endpoint.max_retries = c.value("max_retries", s.endpoint.max_retries);
    s.endpoint.max_in_flight = c.value("max_in_flight", s.endpoint.max_in_flight);
    s.generation_retries = c.value("generation_retries", 0);
    if (c.contains("dim")) s.dim = c.at("dim").get<std::size_t>();
    std::string token_env = c.value("token_env", "");
    if (!token_env.empty()) {
      if (const char* t = std::getenv(token_env.c_str())) s.endpoint.bearer_token = t;
    }
  }
  if (const char* url = std::getenv(env_url); url && *url) {
    s.remote = true;
    s.endpoint.url = url;
  }
  if (s.endpoint.bearer_token.empty()) {
    if (const char* t = std::getenv("PPR_API_TOKEN")) s.endpoint.bearer_token = t;
  }
  if (s.remote && s.endpoint.url.empty()) throw ValidationError(std::string("provider '") + key + "' needs a url");
  return s;
}

}  // namespace

ProviderSet make_providers(const json& config) {
  ProviderSet p = make_mock_providers();
  auto text_sel = select(config, "text_embed", "PPR_TEXT_EMBED_URL");
  auto image_sel = select(config, "image_embed", "PPR_IMAGE_EMBED_URL");
  auto chat_sel = select(config, "chat", "PPR_CHAT_URL");
  auto t2i_sel = select(config, "t2i", "PPR_T2I_URL");
  if (text_sel.remote) {
    p.text = std::make_shared<RemoteTextEmbedder>(text_sel.endpoint, text_sel.dim);
    // The mock image embedder follows whichever text embedder is configured.
    if (!image_sel.remote) p.image = std::make_shared<MockImageEmbedder>(p.text);
  }
  if (image_sel.remote) p.image = std::make_shared<RemoteImageEmbedder>(image_sel.endpoint, image_sel.dim);
  if (chat_sel.remote) p.chat = std::make_shared<RemoteChatModel>(chat_sel.endpoint);
  if (t2i_sel.remote) p.generator = std::make_shared<RemoteImageGenerator>(t2i_sel.endpoint, t2i_sel.generation_retries);
  p.text->attach_log(p.log);
  p.image->attach_log(p.log);
  p.chat->attach_log(p.log);
  p.generator->attach_log(p.log);
  return p;
}

}  // namespace ppr
