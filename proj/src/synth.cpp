#include "ppr/synth.hpp"

#include <algorithm>
#include <cstdio>
#include <set>

#include "ppr/error.hpp"
#include "ppr/util.hpp"

namespace ppr::synth {

namespace {

constexpr const char* kSubjects[] = {
    "castle", "dragon", "cat", "fox", "owl", "lighthouse", "cottage", "robot", "astronaut", "knight",
    "witch", "village", "ship", "train", "garden", "temple", "bridge", "oak tree", "horse", "whale",
    "tiger", "samurai", "mermaid", "phoenix", "wolf", "deer", "rabbit", "butterfly", "waterfall", "island",
    "hobbit home", "library", "market", "girl with an umbrella", "old man", "bicycle", "teapot", "violin",
    "cathedral", "windmill"};

constexpr const char* kScenes[] = {"in the forest", "on a hill",        "by the sea",     "under the stars",
                                   "in a city street", "at sunset",     "in the snow",    "on the moon",
                                   "in a flower field", "near a river", "in the clouds", "inside a cave"};

constexpr const char* kAdjectives[] = {"ancient", "tiny",   "giant", "cute",   "majestic",
                                       "lonely",  "glowing", "old",  "mysterious", "happy"};

constexpr const char* kStyles[] = {"oil painting",        "watercolor",          "cyberpunk neon",
                                   "studio ghibli style", "pixel art",           "ukiyo-e woodblock print",
                                   "art nouveau",         "low poly",            "charcoal sketch",
                                   "vaporwave",           "gothic",              "pastel colors",
                                   "cinematic lighting",  "isometric",           "impressionist",
                                   "steampunk",           "by greg rutkowski",   "double exposure"};

constexpr const char* kQuality[] = {"highly detailed", "8k", "trending on artstation", "sharp focus",
                                    "unreal engine",   "masterpiece", "4k", "volumetric light"};

template <typename T, std::size_t N>
const T& pick(Rng& rng, const T (&arr)[N]) {
  return arr[uniform_below(rng, N)];
}

std::string user_id(std::size_t u) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "u%05zu", u + 1);
  return buf;
}

std::string record_id(std::size_t u, std::size_t i) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "u%05zu-r%04zu", u + 1, i + 1);
  return buf;
}

std::string timestamp(std::size_t u, std::size_t i) {
  // One prompt every 7 hours starting 2023-01-01, offset per user.
  long long minutes = static_cast<long long>(u % 500) * 37 + static_cast<long long>(i) * 420;
  long long day = minutes / 1440;
  int hour = static_cast<int>((minutes % 1440) / 60);
  int minute = static_cast<int>(minutes % 60);
  static constexpr int kMonthDays[] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
  int year = 2023, month = 0;
  while (day >= kMonthDays[month]) {
    day -= kMonthDays[month];
    if (++month == 12) {
      month = 0;
      ++year;
    }
  }
  char buf[80];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:00Z", year, month + 1, static_cast<int>(day) + 1, hour,
                minute);
  return buf;
}

PromptRecord make_record(std::size_t u, std::size_t i, std::string prompt, bool with_ts) {
  PromptRecord r;
  r.record_id = record_id(u, i);
  r.user_id = user_id(u);
  r.prompt_text = std::move(prompt);
  r.image_ref = "https://images.example.com/" + r.user_id + "/" + r.record_id + ".png";
  r.image_width = 512;
  r.image_height = (u + i) % 3 == 0 ? 768 : 512;
  if (with_ts) {
    r.created_at = timestamp(u, i);
    r.created_ms = parse_timestamp_ms(*r.created_at);
  }
  return r;
}

}  // namespace

std::vector<PromptRecord> histories(const Options& o) {
  if (o.min_records < 3 || o.max_records < o.min_records) throw ValidationError("synth: bad record range");
  std::vector<PromptRecord> out;
  for (std::size_t u = 0; u < o.users; ++u) {
    Rng rng(stable_hash({"synth-user", std::to_string(u)}, o.seed));
    const std::size_t n = o.min_records + uniform_below(rng, o.max_records - o.min_records + 1);
    auto favourite = sample_indices(rng, std::size(kStyles), 3);
    std::set<std::string> used;
    for (std::size_t i = 0; i < n; ++i) {
      std::string prompt;
      // Occasional exact repeats, as real users re-run prompts.
      if (i > 0 && uniform_below(rng, 10) == 0 && used.size() > 12) {
        prompt = out[out.size() - 1 - uniform_below(rng, std::min<std::size_t>(i, 3))].prompt_text;
      } else {
        for (int attempt = 0; attempt < 20; ++attempt) {
          prompt = std::string(pick(rng, kAdjectives)) + " " + pick(rng, kSubjects) + " " + pick(rng, kScenes);
          const char* style = uniform_below(rng, 5) < 4 ? kStyles[favourite[uniform_below(rng, 3)]] : pick(rng, kStyles);
          prompt += ", ";
          prompt += style;
          if (uniform_below(rng, 2) == 0) prompt += std::string(", ") + kStyles[favourite[0]];
          prompt += std::string(", ") + pick(rng, kQuality);
          if (!used.count(prompt)) break;
        }
      }
      used.insert(prompt);
      out.push_back(make_record(u, i, prompt, o.timestamps));
    }
  }
  return out;
}

std::vector<std::string> style_oracle_tokens(std::size_t u) {
  static constexpr const char* kOnset[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"};
  static constexpr const char* kVowel[] = {"a", "e", "i", "o", "u"};
  // Base-70 digits of u give a unique syllable pair per user; the suffix
  // tells the three tokens apart.
  auto syllable = [&](std::size_t d) { return std::string(kOnset[d % 14]) + kVowel[d / 14]; };
  const std::size_t hi = (u / 70) % 70;
  const std::size_t lo = u % 70;
  std::string stem = syllable(hi) + syllable(lo) + "x";
  return {stem + "ar", stem + "el", stem + "ond"};
}

std::vector<PromptRecord> style_oracle_histories(std::size_t users, std::uint64_t seed, std::size_t records_per_user) {
  if (users > 4900) throw ValidationError("style oracle supports at most 4900 users");
  std::vector<PromptRecord> out;
  for (std::size_t u = 0; u < users; ++u) {
    Rng rng(stable_hash({"oracle-user", std::to_string(u)}, seed));
    const auto style = join(style_oracle_tokens(u), " ");
    std::set<std::string> used;
    for (std::size_t i = 0; i < records_per_user; ++i) {
      std::string prompt;
      for (int attempt = 0; attempt < 50; ++attempt) {
        prompt = std::string("a ") + pick(rng, kSubjects) + " " + pick(rng, kScenes) + ", " + style;
        if (!used.count(prompt)) break;
      }
      used.insert(prompt);
      out.push_back(make_record(u, i, prompt, true));
    }
  }
  return out;
}

std::vector<PromptRecord> dataset_scale_histories(std::uint64_t seed, std::size_t users, std::size_t records) {
  constexpr std::size_t kMin = 18;
  if (records < users * kMin) throw ValidationError("synth: too few records for the user count");
  Rng rng(mix64(seed ^ 0x9d5ULL));
  std::vector<std::size_t> sizes(users, kMin);
  std::size_t remaining = records - users * kMin;
  // Long-tailed extra counts, then spread the remainder exactly.
  std::vector<double> weights(users);
  double total_w = 0;
  for (auto& w : weights) {
    double x = static_cast<double>(uniform_below(rng, 1000000) + 1) / 1000000.0;
    w = 1.0 / (x * x + 0.02);
    total_w += w;
  }
  std::size_t assigned = 0;
  for (std::size_t u = 0; u < users; ++u) {
    std::size_t extra = static_cast<std::size_t>(static_cast<double>(remaining) * weights[u] / total_w);
    sizes[u] += extra;
    assigned += extra;
  }
  for (std::size_t left = remaining - assigned; left > 0; --left) ++sizes[uniform_below(rng, users)];

  std::vector<PromptRecord> out;
  out.reserve(records);
  for (std::size_t u = 0; u < users; ++u) {
    for (std::size_t i = 0; i < sizes[u]; ++i) {
      std::string prompt = std::string(kAdjectives[(u + i) % std::size(kAdjectives)]) + " " +
                           kSubjects[(u * 7 + i) % std::size(kSubjects)] + " " + kScenes[i % std::size(kScenes)] +
                           ", " + kStyles[(u + i / 3) % std::size(kStyles)];
      out.push_back(make_record(u, i, std::move(prompt), false));
    }
  }
  return out;
}

Corpus to_corpus(const std::vector<PromptRecord>& records) {
  Corpus c;
  for (const auto& r : records) c.add(r);
  return c;
}

}  // namespace ppr::synth
