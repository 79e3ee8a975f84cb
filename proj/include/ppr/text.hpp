#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

namespace ppr {

class Corpus;
class ChatModel;

/// Lowercase word tokens; never contains whitespace or punctuation-only entries.
using TokenStream = std::vector<std::string>;

/// Word segmentation over UTF-8: letters and digits form words, apostrophes
/// between letters and dots between digits stay inside a word, Han
/// ideographs are single-character words, everything else separates.
TokenStream tokenize(std::string_view text);

/// Simple Unicode case folding for Latin, Greek and Cyrillic scripts.
std::string casefold(std::string_view text);

/// trim + collapse internal whitespace to one space + casefold.
std::string normalize_prompt(std::string_view text);

/// Terms used by lexicon-driven shortening.
class Lexicon {
 public:
  Lexicon() = default;
  Lexicon(std::unordered_set<std::string> stopwords, std::unordered_set<std::string> attributes);

  /// Built-in English stopwords plus the attribute/style/quality terms common
  /// in text-to-image prompts.
  static const Lexicon& builtin();

  /// Plain text: one term per line, `#` starts a comment.
  static std::unordered_set<std::string> load_terms(const std::string& path);
  static std::unordered_set<std::string> parse_terms(std::string_view text);

  bool is_stopword(std::string_view term) const;
  bool is_attribute(std::string_view term) const;

  const std::unordered_set<std::string>& stopwords() const { return stopwords_; }
  const std::unordered_set<std::string>& attributes() const { return attributes_; }

 private:
  std::unordered_set<std::string> stopwords_;
  std::unordered_set<std::string> attributes_;
};

enum class ShortenScale { Noun, NounPhrase, ShortSentence };

std::string_view to_string(ShortenScale scale);
ShortenScale parse_shorten_scale(std::string_view name);

enum class PosTag { Noun, Adjective, Other };

/// Optional external part-of-speech hook; must return one tag per token.
using PosTagger = std::function<std::vector<PosTag>(const TokenStream&)>;

struct ShortenOptions {
  const Lexicon* lexicon = nullptr;  // null means Lexicon::builtin()
  ChatModel* chat = nullptr;         // only used for ShortSentence
  PosTagger tagger;
  std::uint64_t seed = 0;
};

/// Instruction used for LLM-backed sentence shortening (placeholder `{x_t}`).
const std::string& shorten_sentence_template();

/// First clause (up to the first comma or period), capped at 12 words.
std::string first_clause(std::string_view prompt, std::size_t max_words = 12);

/// Reduces a prompt to nouns, noun phrases or a short sentence. Noun and
/// NounPhrase operate on the first clause so that, for the same prompt,
/// Noun <= NounPhrase <= ShortSentence(fallback) in word count. The result
/// never has more words than the input.
std::string shorten(std::string_view prompt, ShortenScale scale, const ShortenOptions& options = {});

struct KeywordWeight {
  std::string term;
  double weight = 0.0;

  bool operator==(const KeywordWeight&) const = default;
};

/// Per-user TF-IDF; a user's concatenated prompts form one document.
/// idf = ln((U + 1) / (df + 1)) + 1, weight = max over users of tf * idf.
/// Terms in `drop` are skipped. Throws ValidationError when n <= 0 or the
/// corpus has no users.
std::vector<KeywordWeight> top_keywords(const Corpus& corpus, long n = 250,
                                        const std::unordered_set<std::string>* drop = nullptr);

/// Same computation over explicit per-user documents.
std::vector<KeywordWeight> top_keywords(const std::vector<TokenStream>& user_documents, long n = 250,
                                        const std::unordered_set<std::string>* drop = nullptr);

std::string keywords_to_csv(const std::vector<KeywordWeight>& keywords);

struct LengthStats {
  double mean_words = 0.0;
  std::size_t min_words = 0;
  std::size_t max_words = 0;
  std::size_t prompt_count = 0;
  /// Bucket lower bound (multiple of 10) -> number of prompts.
  std::map<std::size_t, std::size_t> histogram;
};

/// Raw whitespace word counts over every prompt in the corpus.
LengthStats length_stats(const Corpus& corpus);
LengthStats length_stats(const std::vector<std::string>& prompts);

}  // namespace ppr
