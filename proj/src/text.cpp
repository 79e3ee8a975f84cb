#include "ppr/text.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_map>

#include "ppr/corpus.hpp"
#include "ppr/error.hpp"
#include "ppr/providers.hpp"
#include "ppr/util.hpp"

namespace ppr {

namespace {

struct Decoded {
  char32_t cp;
  std::size_t len;
};

Decoded decode_utf8(std::string_view s, std::size_t i) {
  auto byte = [&](std::size_t k) { return static_cast<unsigned char>(s[k]); };
  unsigned char c = byte(i);
  if (c < 0x80) return {c, 1};
  std::size_t len = 0;
  char32_t cp = 0;
  if ((c & 0xE0) == 0xC0) {
    len = 2;
    cp = c & 0x1F;
  } else if ((c & 0xF0) == 0xE0) {
    len = 3;
    cp = c & 0x0F;
  } else if ((c & 0xF8) == 0xF0) {
    len = 4;
    cp = c & 0x07;
  } else {
    return {0xFFFD, 1};
  }
  if (i + len > s.size()) return {0xFFFD, 1};
  for (std::size_t k = 1; k < len; ++k) {
    unsigned char cc = byte(i + k);
    if ((cc & 0xC0) != 0x80) return {0xFFFD, 1};
    cp = (cp << 6) | (cc & 0x3F);
  }
  return {cp, len};
}

void encode_utf8(char32_t cp, std::string& out) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

bool is_han(char32_t cp) {
  return (cp >= 0x4E00 && cp <= 0x9FFF) || (cp >= 0x3400 && cp <= 0x4DBF) ||
         (cp >= 0x20000 && cp <= 0x2A6DF) || (cp >= 0xF900 && cp <= 0xFAFF);
}

bool is_digit(char32_t cp) { return cp >= '0' && cp <= '9'; }

bool is_word_char(char32_t cp) {
  if (cp < 0x80) {
    return (cp >= 'a' && cp <= 'z') || (cp >= 'A' && cp <= 'Z') || is_digit(cp);
  }
  if (cp <= 0xBF) return cp == 0xAA || cp == 0xB5 || cp == 0xBA;
  if (cp == 0xD7 || cp == 0xF7) return false;
  if (cp >= 0x2000 && cp <= 0x2BFF) return false;  // punctuation, symbols, arrows, shapes
  if (cp >= 0x3000 && cp <= 0x303F) return false;  // CJK punctuation
  if (cp >= 0xFE00 && cp <= 0xFE0F) return false;  // variation selectors
  if (cp >= 0xFE30 && cp <= 0xFE4F) return false;
  if (cp >= 0xFF00 && cp <= 0xFF0F) return false;
  if (cp >= 0xFF1A && cp <= 0xFF20) return false;
  if (cp >= 0xFF3B && cp <= 0xFF40) return false;
  if (cp >= 0xFF5B && cp <= 0xFF65) return false;
  if (cp >= 0x1F000 && cp <= 0x1FAFF) return false;  // emoji and pictographs
  if (cp == 0xFFFD || cp == 0xFEFF) return false;
  return true;
}

bool is_letter(char32_t cp) { return is_word_char(cp) && !is_digit(cp); }

bool is_apostrophe(char32_t cp) { return cp == '\'' || cp == 0x2019; }

char32_t fold(char32_t cp) {
  if (cp < 0x80) return (cp >= 'A' && cp <= 'Z') ? cp + 32 : cp;
  if (cp >= 0xC0 && cp <= 0xDE && cp != 0xD7) return cp + 32;
  if (cp >= 0x100 && cp <= 0x17F) {
    if (cp == 0x130) return 'i';
    if (cp == 0x178) return 0xFF;
    if (cp == 0x17F) return 's';
    if ((cp >= 0x139 && cp <= 0x148) || (cp >= 0x179 && cp <= 0x17E)) {
      return (cp % 2 == 1) ? cp + 1 : cp;
    }
    if (cp == 0x138 || cp == 0x149) return cp;
    return (cp % 2 == 0) ? cp + 1 : cp;
  }
  if (cp >= 0x391 && cp <= 0x3A9 && cp != 0x3A2) return cp + 32;
  if (cp == 0x3C2) return 0x3C3;  // final sigma
  if (cp >= 0x410 && cp <= 0x42F) return cp + 32;
  if (cp >= 0x400 && cp <= 0x40F) return cp + 80;
  return cp;
}

void append_folded(char32_t cp, std::string& out) {
  if (cp == 0xDF) {  // sharp s
    out += "ss";
    return;
  }
  encode_utf8(fold(cp), out);
}

}  // namespace

std::string casefold(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    Decoded d = decode_utf8(text, i);
    if (d.cp == 0xFFFD && d.len == 1 && static_cast<unsigned char>(text[i]) >= 0x80) {
      out.push_back(text[i]);  // pass invalid bytes through untouched
    } else {
      append_folded(d.cp, out);
    }
    i += d.len;
  }
  return out;
}

TokenStream tokenize(std::string_view text) {
  std::vector<Decoded> cps;
  std::vector<std::size_t> offsets;
  for (std::size_t i = 0; i < text.size();) {
    Decoded d = decode_utf8(text, i);
    cps.push_back(d);
    offsets.push_back(i);
    i += d.len;
  }

  TokenStream tokens;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) tokens.push_back(std::move(cur));
    cur.clear();
  };
  for (std::size_t k = 0; k < cps.size(); ++k) {
    char32_t cp = cps[k].cp;
    if (is_han(cp)) {
      flush();
      append_folded(cp, cur);
      flush();
      continue;
    }
    if (is_word_char(cp)) {
      append_folded(cp, cur);
      continue;
    }
    bool has_prev = !cur.empty() && k > 0;
    bool has_next = k + 1 < cps.size();
    if (has_prev && has_next) {
      char32_t prev = cps[k - 1].cp;
      char32_t next = cps[k + 1].cp;
      if (is_apostrophe(cp) && is_letter(prev) && is_letter(next) && !is_han(next)) {
        cur.push_back('\'');
        continue;
      }
      if (cp == '.' && is_digit(prev) && is_digit(next)) {
        cur.push_back('.');
        continue;
      }
    }
    flush();
  }
  flush();
  return tokens;
}

std::string normalize_prompt(std::string_view text) { return casefold(join(split_whitespace(text), " ")); }

// ---------------------------------------------------------------------------
// Lexicon

namespace {

constexpr const char* kBuiltinStopwords[] = {
    "a",       "about",  "above",   "after",   "again",   "against", "all",     "also",    "am",
    "an",      "and",    "any",     "are",     "around",  "as",      "at",      "be",      "because",
    "been",    "before", "being",   "below",   "between", "both",    "but",     "by",      "can",
    "could",   "did",    "do",      "does",    "doing",   "down",    "during",  "each",    "few",
    "for",     "from",   "further", "had",     "has",     "have",    "having",  "he",      "her",
    "here",    "hers",   "herself", "him",     "himself", "his",     "how",     "i",       "if",
    "in",      "into",   "is",      "it",      "its",     "itself",  "just",    "like",    "me",
    "more",    "most",   "my",      "myself",  "near",    "no",      "nor",     "not",     "of",
    "off",     "on",     "once",    "only",    "or",      "other",   "our",     "ours",    "out",
    "over",    "own",    "same",    "she",     "should",  "so",      "some",    "such",    "than",
    "that",    "the",    "their",   "theirs",  "them",    "then",    "there",   "these",   "they",
    "this",    "those",  "through", "to",      "too",     "under",   "until",   "up",      "upon",
    "very",    "was",    "we",      "were",    "what",    "when",    "where",   "which",   "while",
    "who",     "whom",   "why",     "will",    "with",    "within",  "without", "would",   "you",
    "your",    "yours",  "onto",    "inside",  "behind",  "beside",  "across",  "toward",  "towards",
};

constexpr const char* kBuiltinAttributes[] = {
    // appearance and mood
    "cute", "golden", "beautiful", "pretty", "lovely", "gorgeous", "stunning", "elegant", "majestic",
    "epic", "dramatic", "cinematic", "moody", "dark", "bright", "colorful", "colourful", "vibrant",
    "soft", "warm", "cold", "cozy", "dreamy", "ethereal", "magical", "mysterious", "surreal",
    "fantasy", "whimsical", "serene", "peaceful", "gloomy", "eerie", "creepy", "spooky", "happy",
    "sad", "lonely", "romantic", "glowing", "shiny", "sparkling", "misty", "foggy", "sunny",
    "rainy", "snowy", "small", "little", "tiny", "big", "large", "huge", "giant", "tall", "old",
    "ancient", "young", "new", "futuristic", "modern", "vintage", "retro", "medieval", "gothic",
    "baroque", "minimalist", "minimal", "abstract", "intricate", "ornate", "delicate", "sharp",
    "smooth", "fluffy", "furry",
    // colours
    "red", "orange", "yellow", "green", "blue", "purple", "violet", "pink", "black", "white", "gray",
    "grey", "brown", "silver", "pastel", "neon", "teal", "cyan", "magenta", "crimson", "turquoise",
    // quality tags
    "4k", "8k", "16k", "hd", "uhd", "hdr", "highly", "high", "ultra", "detailed", "detail", "details",
    "realistic", "hyperrealistic", "photorealistic", "masterpiece", "best", "quality", "resolution",
    "award", "winning", "trending", "artstation", "octane", "unreal", "engine", "sharp", "focus",
    "professional", "full", "wide", "angle",
    // styles and media
    "style", "painting", "oil", "watercolor", "watercolour", "acrylic", "sketch", "drawing",
    "illustration", "digital", "art", "artwork", "concept", "render", "rendering", "photo",
    "photograph", "photography", "portrait", "anime", "manga", "cartoon", "pixel", "3d", "2d",
    "lighting", "light", "volumetric", "bokeh", "studio", "impressionist", "impressionism",
    "cyberpunk", "steampunk", "vaporwave", "synthwave", "pop", "ukiyo", "ukiyoe", "ghibli",
    "greg", "rutkowski",
};

template <std::size_t N>
std::unordered_set<std::string> to_set(const char* const (&arr)[N]) {
  return {std::begin(arr), std::end(arr)};
}

}  // namespace

Lexicon::Lexicon(std::unordered_set<std::string> stopwords, std::unordered_set<std::string> attributes)
    : stopwords_(std::move(stopwords)), attributes_(std::move(attributes)) {}

const Lexicon& Lexicon::builtin() {
  static const Lexicon lex(to_set(kBuiltinStopwords), to_set(kBuiltinAttributes));
  return lex;
}

std::unordered_set<std::string> Lexicon::parse_terms(std::string_view text) {
  std::unordered_set<std::string> out;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::string term = casefold(trim(line));
    if (!term.empty()) out.insert(std::move(term));
  }
  return out;
}

std::unordered_set<std::string> Lexicon::load_terms(const std::string& path) {
  return parse_terms(read_file(path));
}

bool Lexicon::is_stopword(std::string_view term) const { return stopwords_.count(std::string(term)) > 0; }

bool Lexicon::is_attribute(std::string_view term) const {
  return attributes_.count(std::string(term)) > 0;
}

// ---------------------------------------------------------------------------
// Shortening

std::string_view to_string(ShortenScale scale) {
  switch (scale) {
    case ShortenScale::Noun:
      return "noun";
    case ShortenScale::NounPhrase:
      return "noun_phrase";
    case ShortenScale::ShortSentence:
      return "short_sentence";
  }
  return "noun";
}

ShortenScale parse_shorten_scale(std::string_view name) {
  std::string n = casefold(name);
  if (n == "noun") return ShortenScale::Noun;
  if (n == "noun_phrase" || n == "nounphrase" || n == "noun-phrase" || n == "phrase")
    return ShortenScale::NounPhrase;
  if (n == "short_sentence" || n == "shortsentence" || n == "short-sentence" || n == "sentence")
    return ShortenScale::ShortSentence;
  throw ValidationError("unknown shorten scale: " + std::string(name));
}

const std::string& shorten_sentence_template() {
  static const std::string kTemplate =
      "Shorten the following text-to-image prompt into one short sentence that keeps only the "
      "primary object or scene. Use at most 12 words and do not add new content.\n"
      "The prompt is: {x_t}\n"
      "The short sentence is:";
  return kTemplate;
}

namespace {

std::string clamp_words(const std::string& text, std::size_t max_words) {
  auto words = split_whitespace(text);
  if (words.size() <= max_words) return join(words, " ");
  words.resize(max_words);
  return join(words, " ");
}

bool is_clause_break(char32_t cp) { return cp == ',' || cp == '.' || cp == 0xFF0C || cp == 0x3002; }

std::string strip_quotes(std::string s) {
  s = trim(s);
  while (s.size() >= 2 && ((s.front() == '"' && s.back() == '"') || (s.front() == '\'' && s.back() == '\''))) {
    s = trim(std::string_view(s).substr(1, s.size() - 2));
  }
  return s;
}

}  // namespace

std::string first_clause(std::string_view prompt, std::size_t max_words) {
  std::string clause;
  std::size_t i = 0;
  while (i < prompt.size()) {
    Decoded d = decode_utf8(prompt, i);
    if (is_clause_break(d.cp)) {
      bool decimal = d.cp == '.' && i > 0 && i + 1 < prompt.size() &&
                     is_digit(static_cast<unsigned char>(prompt[i - 1])) &&
                     is_digit(static_cast<unsigned char>(prompt[i + 1]));
      if (!decimal) {
        if (!trim(clause).empty()) break;
        clause.clear();  // skip leading empty clauses
        i += d.len;
        continue;
      }
    }
    clause.append(prompt.substr(i, d.len));
    i += d.len;
  }
  return clamp_words(trim(clause), max_words);
}

std::string shorten(std::string_view prompt, ShortenScale scale, const ShortenOptions& options) {
  const std::string trimmed = trim(prompt);
  if (trimmed.empty()) throw ValidationError("shorten: prompt is empty");
  const std::size_t input_words = word_count(trimmed);
  const Lexicon& lex = options.lexicon ? *options.lexicon : Lexicon::builtin();

  const std::string clause = first_clause(trimmed);

  if (scale == ShortenScale::ShortSentence) {
    if (options.chat != nullptr) {
      std::string request = shorten_sentence_template();
      request.replace(request.find("{x_t}"), 5, trimmed);
      std::string reply = strip_quotes(options.chat->complete(request, options.seed).text);
      if (!reply.empty()) return clamp_words(reply, input_words);
    }
    return clause.empty() ? clamp_words(trimmed, input_words) : clause;
  }

  TokenStream tokens = tokenize(clause.empty() ? trimmed : clause);
  if (tokens.empty()) return clamp_words(clause.empty() ? trimmed : clause, input_words);
  const std::size_t budget = std::min(input_words, std::max<std::size_t>(1, word_count(clause)));

  std::vector<PosTag> tags;
  if (options.tagger) {
    tags = options.tagger(tokens);
    if (tags.size() != tokens.size()) throw ValidationError("POS tagger returned wrong tag count");
  } else {
    tags.reserve(tokens.size());
    for (const auto& t : tokens) {
      if (lex.is_stopword(t))
        tags.push_back(PosTag::Other);
      else if (lex.is_attribute(t))
        tags.push_back(PosTag::Adjective);
      else
        tags.push_back(PosTag::Noun);
    }
  }

  std::vector<std::string> kept;
  if (scale == ShortenScale::NounPhrase) {
    for (std::size_t k = 0; k < tokens.size(); ++k) {
      if (tags[k] != PosTag::Other) kept.push_back(tokens[k]);
    }
  } else {
    for (std::size_t k = 0; k < tokens.size(); ++k) {
      if (tags[k] == PosTag::Noun) kept.push_back(tokens[k]);
    }
    if (kept.empty()) {
      // No noun: keep the last content word as the phrase head.
      for (std::size_t k = tokens.size(); k-- > 0;) {
        if (tags[k] != PosTag::Other) {
          kept.push_back(tokens[k]);
          break;
        }
      }
    }
  }
  if (kept.empty()) kept.push_back(tokens.front());
  return clamp_words(join(kept, " "), budget);
}

// ---------------------------------------------------------------------------
// Keywords

std::vector<KeywordWeight> top_keywords(const std::vector<TokenStream>& docs, long n,
                                        const std::unordered_set<std::string>* drop) {
  if (n <= 0) throw ValidationError("top_keywords: n must be positive");
  if (docs.empty()) throw ValidationError("top_keywords: corpus is empty");

  const double users = static_cast<double>(docs.size());
  std::unordered_map<std::string, std::size_t> df;
  std::vector<std::unordered_map<std::string, std::size_t>> counts(docs.size());
  for (std::size_t u = 0; u < docs.size(); ++u) {
    for (const auto& t : docs[u]) {
      if (drop && drop->count(t)) continue;
      ++counts[u][t];
    }
    for (const auto& [term, _] : counts[u]) ++df[term];
  }

  std::unordered_map<std::string, double> best;
  for (std::size_t u = 0; u < docs.size(); ++u) {
    std::size_t len = 0;
    for (const auto& [_, c] : counts[u]) len += c;
    if (len == 0) continue;
    for (const auto& [term, c] : counts[u]) {
      double tf = static_cast<double>(c) / static_cast<double>(len);
      double idf = std::log((users + 1.0) / (static_cast<double>(df[term]) + 1.0)) + 1.0;
      double w = tf * idf;
      auto it = best.find(term);
      if (it == best.end() || w > it->second) best[term] = w;
    }
  }

  std::vector<KeywordWeight> out;
  out.reserve(best.size());
  for (auto& [term, w] : best) out.push_back({term, w});
  std::sort(out.begin(), out.end(), [](const KeywordWeight& a, const KeywordWeight& b) {
    if (a.weight != b.weight) return a.weight > b.weight;
    return a.term < b.term;
  });
  if (out.size() > static_cast<std::size_t>(n)) out.resize(static_cast<std::size_t>(n));
  return out;
}

std::vector<KeywordWeight> top_keywords(const Corpus& corpus, long n, const std::unordered_set<std::string>* drop) {
  std::vector<TokenStream> docs;
  docs.reserve(corpus.user_count());
  for (const auto& [user, history] : corpus.users()) {
    TokenStream doc;
    for (const auto& r : history.records) {
      auto t = tokenize(r.prompt_text);
      doc.insert(doc.end(), t.begin(), t.end());
    }
    docs.push_back(std::move(doc));
  }
  return top_keywords(docs, n, drop);
}

std::string keywords_to_csv(const std::vector<KeywordWeight>& keywords) {
  std::ostringstream out;
  out.precision(10);
  out << "term,weight\n";
  for (const auto& k : keywords) {
    // Tokens never contain commas or quotes, so no escaping is needed.
    out << k.term << ',' << k.weight << '\n';
  }
  return out.str();
}

LengthStats length_stats(const std::vector<std::string>& prompts) {
  if (prompts.empty()) throw ValidationError("length_stats: corpus is empty");
  LengthStats s;
  s.prompt_count = prompts.size();
  s.min_words = static_cast<std::size_t>(-1);
  double total = 0;
  for (const auto& p : prompts) {
    std::size_t w = word_count(p);
    total += static_cast<double>(w);
    s.min_words = std::min(s.min_words, w);
    s.max_words = std::max(s.max_words, w);
    ++s.histogram[(w / 10) * 10];
  }
  s.mean_words = total / static_cast<double>(prompts.size());
  return s;
}

LengthStats length_stats(const Corpus& corpus) {
  std::vector<std::string> prompts;
  for (const auto& [_, history] : corpus.users()) {
    for (const auto& r : history.records) prompts.push_back(r.prompt_text);
  }
  return length_stats(prompts);
}

}  // namespace ppr
