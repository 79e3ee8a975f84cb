#include "ppr/rewrite.hpp"

#include <algorithm>
#include <filesystem>
#include <sstream>

#include "ppr/error.hpp"
#include "ppr/text.hpp"
#include "ppr/util.hpp"

namespace ppr {

using nlohmann::json;

namespace {

// Instruction texts are kept verbatim, including the mix of straight and
// typographic apostrophes.
constexpr const char* kIntro =
    "Prompt in text-to-image generation describes the detailed attributes of the object user plans to draw. "
    "User's preference in text-to-image generation is shown in history prompts.\n"
    "Given 3 history prompts, your task is to rewrite the current prompt so that it matches the user’s "
    "preference. The rewritten prompt should retain primary objects in the original prompt and conform to the "
    "user’s preference. Please avoid being too diffused and restrict your output within 70 words.\n";

constexpr const char* kTail =
    "The history prompts are: {R_t}\n"
    "The current prompt is: {x_t}\n"
    "The rewritten prompt (one sentence less than 70 words) is:";

constexpr const char* kGeneral =
    "Prompt in text-to-image generation describes the detailed attributes of the object he plans to draw. "
    "A nice prompt for text-to-image generation usually includes various aspects of the image including "
    "descriptions of the scene, mood, style, lighting, and more.\n"
    "Given an input prompt, your task is to rewrite the prompt to a better one. Your rewritten prompt is "
    "supposed to describe the image better, and less than 70 words.\n"
    "The input prompt is: {x_t}\n"
    "The rewritten prompt (one sentence less than 70 words) is :";

constexpr const char* kPreference =
    "Your task is to use no more than five phrases to summarize user's preference based on history text prompts "
    "he uses in text to image generation.\n"
    "A user's preference reveals what kind of image he might prefer or the image style he likes. Do not include "
    "objects that appear in history prompts in your answer. Just answer the phrases in sequential order, separate "
    "using a comma.\n"
    "Please summarize the preference for the following user:\n"
    "The history prompts of a user: {Q_t}\n"
    "The keywords of the user's preference:";

// Single pass, so placeholder-like text inside substituted values is left alone.
std::string substitute(std::string_view tmpl, const std::vector<std::pair<std::string_view, std::string_view>>& vars) {
  std::string out;
  out.reserve(tmpl.size() + 256);
  std::size_t i = 0;
  while (i < tmpl.size()) {
    bool replaced = false;
    if (tmpl[i] == '{') {
      for (const auto& [key, value] : vars) {
        if (tmpl.compare(i, key.size(), key) == 0) {
          out.append(value);
          i += key.size();
          replaced = true;
          break;
        }
      }
    }
    if (!replaced) out.push_back(tmpl[i++]);
  }
  return out;
}

std::string require_current(std::string_view current) {
  std::string c = trim(current);
  if (c.empty()) throw ValidationError("current prompt is empty");
  return c;
}

std::string strip_reply(std::string_view reply) {
  std::string s = trim(reply);
  auto strip_pair = [&](std::string_view open, std::string_view close) {
    if (s.size() >= open.size() + close.size() && s.compare(0, open.size(), open) == 0 &&
        s.compare(s.size() - close.size(), close.size(), close) == 0) {
      s = trim(std::string_view(s).substr(open.size(), s.size() - open.size() - close.size()));
      return true;
    }
    return false;
  };
  while (strip_pair("\"", "\"") || strip_pair("'", "'") || strip_pair("“", "”") ||
         strip_pair("‘", "’")) {
  }
  return s;
}

}  // namespace

const Templates& Templates::builtin() {
  static const Templates t{std::string(kIntro) + kTail, std::string(kIntro) + "Examples:{E}\n" + kTail, kGeneral,
                           kPreference};
  return t;
}

std::string Templates::parse_template_file(std::string_view content) {
  std::string_view rest = content;
  while (rest.substr(0, 2) == "# ") {
    auto nl = rest.find('\n');
    rest = nl == std::string_view::npos ? std::string_view() : rest.substr(nl + 1);
  }
  if (!rest.empty() && rest.back() == '\n') rest.remove_suffix(1);
  return std::string(rest);
}

Templates Templates::load_dir(const std::string& dir) {
  namespace fs = std::filesystem;
  auto load = [&](const char* name) { return parse_template_file(read_file((fs::path(dir) / name).string())); };
  return {load("context_independent.txt"), load("in_context.txt"), load("general.txt"), load("preference.txt")};
}

void validate(const DemoExample& d) {
  if (d.histories.size() != 3) throw ValidationError("demo " + d.id + ": needs exactly 3 histories");
  for (const auto& h : d.histories) {
    if (trim(h).empty()) throw ValidationError("demo " + d.id + ": empty history");
  }
  if (trim(d.input_prompt).empty()) throw ValidationError("demo " + d.id + ": empty input_prompt");
  if (trim(d.rewritten_prompt).empty()) throw ValidationError("demo " + d.id + ": empty rewritten_prompt");
}

std::vector<DemoExample> parse_demo_pool(const json& j) {
  if (!j.is_array()) throw ValidationError("demo pool must be a JSON array");
  std::vector<DemoExample> pool;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const json& e = j[i];
    DemoExample d;
    d.id = e.value("id", "e" + std::to_string(i + 1));
    d.histories = e.at("histories").get<std::vector<std::string>>();
    d.input_prompt = e.at("input_prompt").get<std::string>();
    d.rewritten_prompt = e.at("rewritten_prompt").get<std::string>();
    validate(d);
    pool.push_back(std::move(d));
  }
  return pool;
}

std::vector<DemoExample> load_demo_pool(const std::string& path) { return parse_demo_pool(json::parse(read_file(path))); }

const std::vector<DemoExample>& builtin_demo_pool() {
  static const std::vector<DemoExample> pool = {
      {"e1",
       {"a quiet harbor at dawn, oil painting, impressionist brush strokes",
        "portrait of an old fisherman, oil painting, warm palette",
        "sunflowers in a clay vase, thick impasto oil painting"},
       "a lighthouse",
       "a lighthouse on a rocky shore at dawn, impressionist oil painting with thick brush strokes and a warm palette"},
      {"e2",
       {"cyberpunk alley at night, neon signs, rain, cinematic lighting",
        "futuristic city skyline, neon glow, blade runner style, 8k",
        "robot bartender in a neon bar, cinematic, highly detailed"},
       "a street food stall",
       "a street food stall in a rainy cyberpunk alley at night, glowing neon signs, cinematic lighting, highly "
       "detailed, 8k"},
      {"e3",
       {"cute corgi in a flower field, studio ghibli style, soft pastel colors",
        "little witch flying over a village, ghibli anime style",
        "cozy cottage in the forest, anime background art, pastel"},
       "a cat sleeping",
       "a cute cat sleeping on a cozy windowsill, studio ghibli anime style, soft pastel colors"},
      {"e4",
       {"misty mountain lake, landscape photography, golden hour, 35mm",
        "pine forest in fog, moody landscape photo, long exposure",
        "snowy peaks at sunrise, national geographic photo, sharp focus"},
       "a wooden cabin",
       "a wooden cabin beside a misty mountain lake at golden hour, moody landscape photography, 35mm, sharp focus"},
      {"e5",
       {"dragon made of stained glass, intricate, ornate, fantasy art",
        "elven queen with a crown of crystal, intricate details, fantasy portrait",
        "ancient temple in the clouds, epic fantasy concept art, ornate"},
       "a knight",
       "an ornate knight in stained glass armor, intricate details, epic fantasy concept art"},
  };
  return pool;
}

std::string render_numbered(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += '\n';
    out += std::to_string(i + 1) + ". " + trim(items[i]);
  }
  return out;
}

std::string render_demos(const std::vector<DemoExample>& demos) {
  std::string out;
  for (std::size_t i = 0; i < demos.size(); ++i) {
    const auto& d = demos[i];
    out += "\nExample " + std::to_string(i + 1) + ":\n";
    out += "History prompts: " + render_numbered(d.histories) + "\n";
    out += "Input prompt: " + trim(d.input_prompt) + "\n";
    out += "Rewritten prompt: " + trim(d.rewritten_prompt);
  }
  return out;
}

std::string build_ctx_independent_prompt(const std::vector<std::string>& retrieved, std::string_view current,
                                         const Templates& templates) {
  if (retrieved.empty()) throw ValidationError("context-independent rewriting needs at least one history prompt");
  std::string cur = require_current(current);
  std::string hist = render_numbered(retrieved);
  return substitute(templates.context_independent, {{"{R_t}", hist}, {"{x_t}", cur}});
}

std::string build_icl_prompt(const std::vector<DemoExample>& demos, const std::vector<std::string>& retrieved,
                             std::string_view current, const Templates& templates) {
  if (demos.empty()) throw ValidationError("in-context rewriting needs at least one demonstration");
  if (retrieved.empty()) throw ValidationError("in-context rewriting needs at least one history prompt");
  std::string cur = require_current(current);
  std::string hist = render_numbered(retrieved);
  std::string examples = render_demos(demos);
  return substitute(templates.in_context, {{"{E}", examples}, {"{R_t}", hist}, {"{x_t}", cur}});
}

std::string build_general_prompt(std::string_view current, const Templates& templates) {
  std::string cur = require_current(current);
  return substitute(templates.general, {{"{x_t}", cur}});
}

std::string build_preference_prompt(const std::vector<std::string>& history_prompts, const Templates& templates) {
  if (history_prompts.empty()) throw ValidationError("preference summary needs history prompts");
  std::string hist = render_numbered(history_prompts);
  return substitute(templates.preference, {{"{Q_t}", hist}});
}

std::vector<DemoExample> select_demos(const std::vector<DemoExample>& pool, std::string_view current,
                                      std::size_t shots, TextEmbedder& embed, std::uint64_t seed) {
  if (shots < 1) throw ValidationError("select_demos: shots must be >= 1");
  if (shots > pool.size()) {
    throw ValidationError("select_demos: " + std::to_string(shots) + " shots requested from a pool of " +
                          std::to_string(pool.size()));
  }
  Rng rng(stable_hash({"demos", current}, seed));
  auto picked = sample_indices(rng, pool.size(), shots);
  EmbeddingVector q = embed.embed_text(current);
  std::vector<std::pair<double, std::size_t>> scored;
  for (std::size_t i : picked) scored.emplace_back(cosine(embed.embed_text(pool[i].input_prompt), q), i);
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  std::vector<DemoExample> out;
  for (const auto& [_, i] : scored) out.push_back(pool[i]);
  return out;
}

std::string RewriteMode::label() const {
  switch (kind) {
    case Kind::Passthrough:
      return "passthrough";
    case Kind::GeneralPR:
      return "general";
    case Kind::PersonalizedPR:
      return "personalized:" + std::string(to_string(retriever)) + ":" + std::to_string(icl_shots);
  }
  return "passthrough";
}

RewriteMode RewriteMode::parse(std::string_view label) {
  std::string l = casefold(trim(label));
  if (l == "passthrough" || l == "shortened" || l == "original") return passthrough();
  if (l == "general" || l == "general_pr") return general();
  if (l.rfind("personalized", 0) == 0) {
    RewriteMode m = personalized();
    std::string rest = l.substr(std::string_view("personalized").size());
    if (rest.empty()) return m;
    if (rest[0] != ':') throw ValidationError("bad rewrite mode: " + std::string(label));
    rest.erase(0, 1);
    auto colon = rest.find(':');
    m.retriever = parse_retrieval_method(rest.substr(0, colon));
    if (colon != std::string::npos) {
      const std::string shots = rest.substr(colon + 1);
      try {
        std::size_t used = 0;
        m.icl_shots = std::stoi(shots, &used);
        if (used != shots.size() || m.icl_shots < 0) throw std::invalid_argument("shots");
      } catch (const std::exception&) {
        throw ValidationError("bad shot count in rewrite mode: " + std::string(label));
      }
    }
    return m;
  }
  throw ValidationError("unknown rewrite mode: " + std::string(label));
}

std::string render_preference(const UserPreference& p) { return join(p.phrases, ", "); }

std::vector<std::string> parse_preference_phrases(std::string_view reply) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    std::string t = strip_reply(cur);
    if (!t.empty() && out.size() < 5) out.push_back(std::move(t));
    cur.clear();
  };
  for (char c : reply) {
    if (c == ',' || c == '\n') {
      flush();
    } else {
      cur.push_back(c);
    }
  }
  flush();
  return out;
}

Rewriter::Rewriter(ProviderSet providers, std::vector<DemoExample> demo_pool, Templates templates)
    : providers_(std::move(providers)), demo_pool_(std::move(demo_pool)), templates_(std::move(templates)) {
  for (const auto& d : demo_pool_) validate(d);
}

RewrittenPrompt Rewriter::rewrite(const UserHistory& history, std::string_view current, const RewriteMode& mode,
                                  const RewriteOptions& options) const {
  const std::string cur = require_current(current);
  RewrittenPrompt out;
  out.mode = mode;

  auto finish = [&](std::string text) {
    out.text = std::move(text);
    out.word_count = word_count(out.text);
    out.over_limit = out.word_count > kRewriteWordLimit;
    return out;
  };
  auto ask = [&](const std::string& request) {
    out.request = request;
    ChatResult r = providers_.chat->complete(request, options.seed);
    out.truncated = r.truncated;
    std::string text = strip_reply(r.text);
    if (text.empty()) throw ProviderError("chat returned an empty rewrite", false);
    return text;
  };

  try {
    switch (mode.kind) {
      case RewriteMode::Kind::Passthrough:
        return finish(cur);
      case RewriteMode::Kind::GeneralPR:
        return finish(ask(build_general_prompt(cur, templates_)));
      case RewriteMode::Kind::PersonalizedPR:
        break;
    }
    if (mode.icl_shots < 0) throw ValidationError("icl_shots must be >= 0");
    auto results = retrieve(history, cur, mode.retriever, options.k, options.exclude, providers_.text.get());
    if (results.empty()) {
      out.fell_back_to_general = true;
      return finish(ask(build_general_prompt(cur, templates_)));
    }
    std::vector<std::string> prompts;
    for (const auto& r : results) {
      out.retrieved.push_back(r.record_id);
      prompts.push_back(r.prompt_text);
    }
    if (mode.icl_shots == 0) return finish(ask(build_ctx_independent_prompt(prompts, cur, templates_)));
    auto demos = select_demos(demo_pool_, cur, static_cast<std::size_t>(mode.icl_shots), *providers_.text,
                              options.seed);
    for (const auto& d : demos) out.demos_used.push_back(d.id);
    return finish(ask(build_icl_prompt(demos, prompts, cur, templates_)));
  } catch (const ProviderError& e) {
    throw ProviderError("rewrite[" + mode.label() + "]: " + e.what(), e.retryable(), e.status());
  }
}

UserPreference Rewriter::summarize_preference(const UserHistory& history, std::uint64_t seed) const {
  if (history.empty()) throw ValidationError("summarize_preference: history is empty");
  Rng rng(stable_hash({"preference", history.user_id}, seed));
  auto picked = sample_indices(rng, history.size(), std::min(kPreferenceSampleSize, history.size()));
  std::sort(picked.begin(), picked.end());
  UserPreference pref;
  pref.user_id = history.user_id;
  std::vector<std::string> prompts;
  for (std::size_t i : picked) {
    prompts.push_back(history.records[i].prompt_text);
    pref.source_sample.push_back(history.records[i].record_id);
  }
  ChatResult r = providers_.chat->complete(build_preference_prompt(prompts, templates_), seed);
  pref.phrases = parse_preference_phrases(r.text);
  if (pref.phrases.empty()) throw ProviderError("preference summary for " + history.user_id + " is empty", false);
  return pref;
}

}  // namespace ppr
