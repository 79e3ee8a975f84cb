#include "ppr/service.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>

#include <httplib.h>

#include "ppr/error.hpp"
#include "ppr/util.hpp"

namespace ppr {

using nlohmann::json;

namespace {

std::int64_t now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

std::string iso_utc(std::int64_t ms) {
  std::time_t secs = static_cast<std::time_t>(ms / 1000);
  std::tm tm{};
  gmtime_r(&secs, &tm);
  char buf[80];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900, tm.tm_mon + 1,
                tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(ms % 1000));
  return buf;
}

json to_json(const GenerationEntry& g) {
  return {{"image_id", g.image_id},   {"user_id", g.user_id},   {"request_id", g.request_id},
          {"prompt", g.prompt},       {"rewritten", g.rewritten}, {"arm", std::string(to_string(g.arm))},
          {"locator", g.locator},     {"blinded_token", g.blinded_token}, {"created_ms", g.created_ms}};
}

GenerationEntry generation_from_json(const json& j) {
  GenerationEntry g;
  g.image_id = j.at("image_id").get<std::string>();
  g.user_id = j.at("user_id").get<std::string>();
  g.request_id = j.at("request_id").get<std::string>();
  g.prompt = j.at("prompt").get<std::string>();
  g.rewritten = j.at("rewritten").get<std::string>();
  g.arm = parse_arm(j.at("arm").get<std::string>());
  g.locator = j.at("locator").get<std::string>();
  g.blinded_token = j.at("blinded_token").get<std::string>();
  g.created_ms = j.at("created_ms").get<std::int64_t>();
  return g;
}

json to_json(const FeedbackEvent& f) {
  return {{"image_id", f.image_id},
          {"action", std::string(to_string(f.action))},
          {"arm", std::string(to_string(f.arm))},
          {"user_id", f.user_id},
          {"timestamp_ms", f.timestamp_ms}};
}

void append_line(const std::string& path, const json& j) {
  if (path.empty()) return;
  std::ofstream out(path, std::ios::app);
  out << j.dump() << '\n';
  out.flush();
  if (!out) throw Error("log write failed: " + path);
}

template <typename F>
void replay(const std::string& path, F&& apply) {
  if (path.empty()) return;
  std::ifstream in(path);
  if (!in) return;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      apply(json::parse(line));
    } catch (const json::exception& e) {
      throw ParseError(lineno, path + ": " + e.what());
    }
  }
}

json stats_json(const ArmStats& s) {
  return {{"images_generated", s.images_generated},
          {"saves", s.saves},
          {"deletes", s.deletes},
          {"save_rate", s.save_rate}};
}

}  // namespace

std::string_view to_string(Arm arm) { return arm == Arm::Original ? "original" : "personalized"; }

Arm parse_arm(std::string_view name) {
  if (name == "original") return Arm::Original;
  if (name == "personalized") return Arm::Personalized;
  throw ValidationError("unknown arm: " + std::string(name));
}

Arm assign_arm(std::string_view user_id, std::string_view request_id, std::uint64_t experiment_seed) {
  return (stable_hash({"arm", user_id, request_id}, experiment_seed) >> 63) ? Arm::Personalized : Arm::Original;
}

std::string_view to_string(FeedbackAction action) { return action == FeedbackAction::Save ? "save" : "delete"; }

FeedbackAction parse_feedback_action(std::string_view name) {
  std::string n = casefold(name);
  if (n == "save") return FeedbackAction::Save;
  if (n == "delete") return FeedbackAction::Delete;
  throw ValidationError("action must be 'save' or 'delete'");
}

json AbReport::to_json() const {
  json j{{"original", stats_json(original)},
         {"personalized", stats_json(personalized)},
         {"total_generations", total_generations()}};
  j["absolute_diff"] = absolute_diff ? json(*absolute_diff) : json(nullptr);
  j["relative_improvement"] = relative_improvement ? json(*relative_improvement) : json(nullptr);
  return j;
}

AbLedger::AbLedger(std::string generations_path, std::string feedback_path)
    : generations_path_(std::move(generations_path)), feedback_path_(std::move(feedback_path)) {
  replay(generations_path_, [&](const json& j) {
    auto g = generation_from_json(j);
    if (generations_.count(g.image_id)) throw DuplicateError("generation log repeats " + g.image_id);
    generation_order_.push_back(g.image_id);
    generations_.emplace(g.image_id, std::move(g));
  });
  replay(feedback_path_, [&](const json& j) {
    FeedbackEvent f;
    f.image_id = j.at("image_id").get<std::string>();
    f.action = parse_feedback_action(j.at("action").get<std::string>());
    f.arm = parse_arm(j.at("arm").get<std::string>());
    f.user_id = j.at("user_id").get<std::string>();
    f.timestamp_ms = j.at("timestamp_ms").get<std::int64_t>();
    if (!generations_.count(f.image_id)) throw NotFoundError("feedback log names unknown image " + f.image_id);
    if (feedback_.count(f.image_id)) throw DuplicateError("feedback log repeats " + f.image_id);
    feedback_order_.push_back(f.image_id);
    feedback_.emplace(f.image_id, std::move(f));
  });
}

void AbLedger::record_generation(const GenerationEntry& entry) {
  if (entry.image_id.empty()) throw ValidationError("generation needs an image_id");
  std::lock_guard lock(mu_);
  if (generations_.count(entry.image_id)) throw DuplicateError("image_id already recorded: " + entry.image_id);
  append_line(generations_path_, to_json(entry));
  generation_order_.push_back(entry.image_id);
  generations_.emplace(entry.image_id, entry);
}

FeedbackEvent AbLedger::record_feedback(const std::string& image_id, FeedbackAction action,
                                        std::int64_t timestamp_ms) {
  std::lock_guard lock(mu_);
  auto it = generations_.find(image_id);
  if (it == generations_.end()) throw NotFoundError("unknown image_id: " + image_id);
  if (feedback_.count(image_id)) throw DuplicateError("feedback already recorded for " + image_id);
  FeedbackEvent f{image_id, action, it->second.arm, it->second.user_id, timestamp_ms};
  append_line(feedback_path_, to_json(f));
  feedback_order_.push_back(image_id);
  feedback_.emplace(image_id, f);
  return f;
}

std::optional<GenerationEntry> AbLedger::generation(const std::string& image_id) const {
  std::lock_guard lock(mu_);
  auto it = generations_.find(image_id);
  if (it == generations_.end()) return std::nullopt;
  return it->second;
}

std::vector<GenerationEntry> AbLedger::generations() const {
  std::lock_guard lock(mu_);
  std::vector<GenerationEntry> out;
  for (const auto& id : generation_order_) out.push_back(generations_.at(id));
  return out;
}

std::vector<FeedbackEvent> AbLedger::feedback() const {
  std::lock_guard lock(mu_);
  std::vector<FeedbackEvent> out;
  for (const auto& id : feedback_order_) out.push_back(feedback_.at(id));
  return out;
}

AbReport AbLedger::report() const {
  std::lock_guard lock(mu_);
  AbReport r;
  auto arm_stats = [&](Arm arm) -> ArmStats& { return arm == Arm::Original ? r.original : r.personalized; };
  for (const auto& [id, g] : generations_) ++arm_stats(g.arm).images_generated;
  for (const auto& [id, f] : feedback_) {
    auto& s = arm_stats(f.arm);
    if (f.action == FeedbackAction::Save)
      ++s.saves;
    else
      ++s.deletes;
  }
  for (ArmStats* s : {&r.original, &r.personalized}) {
    if (s->images_generated > 0)
      s->save_rate = static_cast<double>(s->saves) / static_cast<double>(s->images_generated);
  }
  if (r.original.images_generated > 0 && r.personalized.images_generated > 0) {
    r.absolute_diff = r.personalized.save_rate - r.original.save_rate;
    if (r.original.save_rate > 0.0) r.relative_improvement = *r.absolute_diff / r.original.save_rate;
  }
  return r;
}

json GenerateResponse::to_json() const {
  return {{"image_id", image_id}, {"locator", locator}, {"blinded_token", blinded_token}};
}

json HistoryPage::to_json() const {
  json recs = json::array();
  for (const auto& r : records) recs.push_back(ppr::to_json(r));
  return {{"user_id", user_id}, {"page", page},   {"page_size", page_size},
          {"total", total},     {"pages", pages}, {"records", recs}};
}

namespace {

std::string state_file(const std::string& dir, const char* name) {
  if (dir.empty()) return {};
  std::filesystem::create_directories(dir);
  return (std::filesystem::path(dir) / name).string();
}

}  // namespace

Service::Service(ProviderSet providers, ServiceOptions options, std::vector<DemoExample> demo_pool,
                 Templates templates)
    : options_(std::move(options)),
      rewriter_(std::move(providers), std::move(demo_pool), std::move(templates)),
      store_(state_file(options_.state_dir, "records.jsonl")),
      ledger_(state_file(options_.state_dir, "generations.jsonl"), state_file(options_.state_dir, "feedback.jsonl")),
      rng_(std::random_device{}()) {
  if (options_.k < 1) throw ValidationError("service: k must be >= 1");
  if (options_.page_size < 1) throw ValidationError("service: page_size must be >= 1");
  options_.generation.validate();
  for (const auto& g : ledger_.generations()) store_.ensure_user(g.user_id);
}

std::size_t Service::import_corpus(const Corpus& corpus) {
  std::size_t added = 0;
  for (const auto& [user, h] : corpus.users()) {
    store_.ensure_user(user);
    for (const auto& r : h.records) {
      if (store_.contains(r.record_id)) continue;
      store_.append(r);
      ++added;
    }
  }
  return added;
}

std::string Service::fresh_id(std::string_view prefix) {
  std::lock_guard lock(rng_mu_);
  return std::string(prefix) + hex64(rng_()) + hex64(rng_()).substr(0, 8);
}

GenerateResponse Service::generate(const std::string& user_id, const std::string& prompt,
                                   std::optional<std::string> request_id) {
  if (trim(user_id).empty()) throw ValidationError("user_id must be non-empty");
  if (trim(prompt).empty()) throw ValidationError("prompt must be non-empty");
  store_.ensure_user(user_id);

  GenerationEntry g;
  g.user_id = user_id;
  g.prompt = prompt;
  g.request_id = request_id ? *request_id : fresh_id("req-");
  g.arm = assign_arm(user_id, g.request_id, options_.experiment_seed);

  if (g.arm == Arm::Original) {
    g.rewritten = prompt;
  } else {
    UserHistory h = store_.history(user_id).value_or(UserHistory{user_id, {}});
    RewriteOptions ro;
    ro.k = options_.k;
    ro.seed = stable_hash({"rewrite", user_id, g.request_id}, options_.seed);
    g.rewritten = rewriter_.rewrite(h, prompt, RewriteMode::personalized(options_.retriever, options_.shots), ro).text;
  }

  GenerationParams params = options_.generation;
  params.seed = stable_hash({"t2i", user_id, g.request_id}, options_.seed);
  ImageRef img = rewriter_.providers().generator->generate(g.rewritten, params);

  g.image_id = fresh_id("img-");
  g.locator = img.locator;
  g.blinded_token = fresh_id("tok-");
  g.created_ms = now_ms();
  ledger_.record_generation(g);
  return {g.image_id, g.locator, g.blinded_token};
}

FeedbackEvent Service::feedback(const std::string& image_id, FeedbackAction action) {
  auto g = ledger_.generation(image_id);
  if (!g) throw NotFoundError("unknown image_id: " + image_id);
  const std::int64_t ts = now_ms();
  FeedbackEvent f = ledger_.record_feedback(image_id, action, ts);
  if (action == FeedbackAction::Save) {
    PromptRecord r;
    r.record_id = image_id;
    r.user_id = g->user_id;
    r.prompt_text = g->prompt;
    r.image_ref = g->locator;
    // Saves keep their order even within one millisecond.
    std::int64_t at = ts;
    if (auto h = store_.history(g->user_id); h && !h->records.empty() && h->records.back().created_ms)
      at = std::max(at, *h->records.back().created_ms + 1);
    r.created_at = iso_utc(at);
    r.created_ms = at;
    store_.append(std::move(r));
  }
  return f;
}

HistoryPage Service::history(const std::string& user_id, std::size_t page) const {
  auto h = store_.history(user_id);
  if (!h) throw NotFoundError("unknown user: " + user_id);
  if (page < 1) throw ValidationError("page must be >= 1");
  HistoryPage out;
  out.user_id = user_id;
  out.page = page;
  out.page_size = options_.page_size;
  out.total = h->size();
  out.pages = (out.total + out.page_size - 1) / out.page_size;
  const std::size_t begin = (page - 1) * out.page_size;
  for (std::size_t i = begin; i < std::min(out.total, begin + out.page_size); ++i)
    out.records.push_back(h->records[out.total - 1 - i]);
  return out;
}

UserPreference Service::preference(const std::string& user_id) {
  auto h = store_.history(user_id);
  if (!h) throw NotFoundError("unknown user: " + user_id);
  if (h->empty()) return UserPreference{user_id, {}, {}};
  {
    std::lock_guard lock(pref_mu_);
    auto it = preferences_.find(user_id);
    if (it != preferences_.end() && h->size() < it->second.history_size + options_.preference_refresh)
      return it->second.preference;
  }
  UserPreference p = rewriter_.summarize_preference(*h, options_.seed);
  std::lock_guard lock(pref_mu_);
  preferences_[user_id] = {p, h->size()};
  return p;
}

std::vector<KeywordWeight> Service::keywords(long n) const {
  if (n <= 0) throw ValidationError("n must be positive");
  Corpus c = store_.snapshot();
  if (c.record_count() == 0) return {};
  const auto* drop = options_.drop_stopwords_in_keywords ? &Lexicon::builtin().stopwords() : nullptr;
  return top_keywords(c, n, drop);
}

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, std::string_view code, std::string_view message) {
  send_json(res, status, json{{"code", code}, {"message", message}});
}

template <typename F>
void guarded(httplib::Response& res, F&& handler) {
  try {
    handler();
  } catch (const json::exception& e) {
    send_error(res, 400, "bad_request", e.what());
  } catch (const ValidationError& e) {
    send_error(res, 400, "bad_request", e.what());
  } catch (const NotFoundError& e) {
    send_error(res, 404, "not_found", e.what());
  } catch (const DuplicateError& e) {
    send_error(res, 409, "conflict", e.what());
  } catch (const ProviderError& e) {
    send_error(res, 502, "provider_error", e.what());
  } catch (const std::exception& e) {
    send_error(res, 500, "internal", e.what());
  }
}

json parse_body(const httplib::Request& req) {
  json body = json::parse(req.body);
  if (!body.is_object()) throw ValidationError("request body must be a JSON object");
  return body;
}

std::string required_string(const json& body, const char* key) {
  if (!body.contains(key) || !body.at(key).is_string())
    throw ValidationError(std::string("missing string field '") + key + "'");
  return body.at(key).get<std::string>();
}

std::size_t parse_positive(const std::string& text, const char* name) {
  std::size_t pos = 0;
  long long v = 0;
  try {
    v = std::stoll(text, &pos);
  } catch (const std::exception&) {
    throw ValidationError(std::string(name) + " must be an integer");
  }
  if (pos != text.size() || v < 1) throw ValidationError(std::string(name) + " must be a positive integer");
  return static_cast<std::size_t>(v);
}

}  // namespace

HttpServer::HttpServer(Service& service) : service_(service), server_(std::make_unique<httplib::Server>()) {
  install_routes();
}

HttpServer::~HttpServer() { stop(); }

void HttpServer::install_routes() {
  auto& s = *server_;
  s.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                         {"Access-Control-Allow-Headers", "Content-Type"},
                         {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
  s.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  s.Get("/healthz", [this](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, json{{"status", "ok"}, {"records", service_.store().record_count()}});
  });

  s.Post("/v1/generate", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      json body = parse_body(req);
      std::optional<std::string> request_id;
      if (body.contains("request_id")) request_id = required_string(body, "request_id");
      auto out = service_.generate(required_string(body, "user_id"), required_string(body, "prompt"), request_id);
      send_json(res, 200, out.to_json());
    });
  });

  s.Post("/v1/feedback", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      json body = parse_body(req);
      auto f = service_.feedback(required_string(body, "image_id"),
                                 parse_feedback_action(required_string(body, "action")));
      send_json(res, 200, json{{"image_id", f.image_id}, {"action", to_string(f.action)}, {"acknowledged", true}});
    });
  });

  s.Get("/v1/report/ab", [this](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 200, service_.report().to_json()); });
  });

  s.Get(R"(/v1/users/([^/]+)/history)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      std::size_t page = req.has_param("page") ? parse_positive(req.get_param_value("page"), "page") : 1;
      send_json(res, 200, service_.history(req.matches[1], page).to_json());
    });
  });

  s.Get(R"(/v1/users/([^/]+)/preference)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      auto p = service_.preference(req.matches[1]);
      send_json(res, 200, json{{"user_id", p.user_id}, {"phrases", p.phrases}});
    });
  });

  s.Get("/v1/keywords", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      long n = req.has_param("n") ? static_cast<long>(parse_positive(req.get_param_value("n"), "n")) : 250;
      json items = json::array();
      for (const auto& k : service_.keywords(n)) items.push_back({{"term", k.term}, {"weight", k.weight}});
      send_json(res, 200, json{{"n", n}, {"keywords", items}});
    });
  });

  s.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) send_error(res, res.status, res.status == 404 ? "not_found" : "error", "no such route");
  });
}

int HttpServer::start(const std::string& host, int port) {
  int bound = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw Error("cannot bind " + host + ":" + std::to_string(port));
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return bound;
}

void HttpServer::run(const std::string& host, int port) {
  if (!server_->listen(host, port)) throw Error("cannot listen on " + host + ":" + std::to_string(port));
}

void HttpServer::wait() {
  if (thread_.joinable()) thread_.join();
}

void HttpServer::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace ppr
