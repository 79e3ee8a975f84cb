#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "ppr/corpus.hpp"
#include "ppr/error.hpp"
#include "ppr/providers.hpp"
#include "ppr/synth.hpp"
#include "ppr/text.hpp"
#include "ppr/util.hpp"

using namespace ppr;

TEST(Tokenize, DropsPunctuationAndFolds) {
  EXPECT_EQ(tokenize("Hobbit homes, 4k!"), (TokenStream{"hobbit", "homes", "4k"}));
  EXPECT_TRUE(tokenize("").empty());
  EXPECT_EQ(tokenize("A a A"), (TokenStream{"a", "a", "a"}));
}

TEST(Tokenize, KeepsInnerApostropheAndDecimal) {
  EXPECT_EQ(tokenize("user's 1.5x zoom."), (TokenStream{"user's", "1.5x", "zoom"}));
  EXPECT_EQ(tokenize("'quoted'"), (TokenStream{"quoted"}));
}

TEST(Tokenize, UnicodeLettersAndHan) {
  EXPECT_EQ(tokenize("CAFÉ Über"), (TokenStream{"café", "über"}));
  EXPECT_EQ(tokenize("Straße"), (TokenStream{"strasse"}));
  EXPECT_EQ(tokenize("ΣΟΦΟΣ"), (TokenStream{"σοφοσ"}));
  EXPECT_EQ(tokenize("σοφος"), tokenize("ΣΟΦΟΣ"));
  EXPECT_EQ(tokenize("猫と犬"), (TokenStream{"猫", "と", "犬"}));
  EXPECT_EQ(tokenize("a🐱b"), (TokenStream{"a", "b"}));
}

TEST(Tokenize, IdempotentOnOwnOutput) {
  Rng rng(5);
  auto records = synth::histories({});
  for (const auto& r : records) {
    auto once = tokenize(r.prompt_text);
    EXPECT_EQ(tokenize(join(once, " ")), once);
  }
}

TEST(Lexicon, ParseTermsSkipsComments) {
  auto terms = Lexicon::parse_terms("# header\nCute\n\n  golden  # trailing\n");
  EXPECT_EQ(terms.size(), 2u);
  EXPECT_TRUE(terms.count("cute"));
  EXPECT_TRUE(terms.count("golden"));
}

TEST(Lexicon, BundledFilesMatchBuiltin) {
  auto stop = Lexicon::load_terms(std::string(PPR_SOURCE_DIR) + "/data/stopwords.txt");
  auto attr = Lexicon::load_terms(std::string(PPR_SOURCE_DIR) + "/data/attributes.txt");
  EXPECT_EQ(stop, Lexicon::builtin().stopwords());
  EXPECT_EQ(attr, Lexicon::builtin().attributes());
  for (const char* t : {"cute", "golden", "beautiful"}) EXPECT_TRUE(attr.count(t)) << t;
}

TEST(Shorten, NounScaleWithFixedLexicon) {
  Lexicon lex({}, {"cute", "golden"});
  ShortenOptions o;
  o.lexicon = &lex;
  EXPECT_EQ(shorten("cute golden retriever", ShortenScale::Noun, o), "retriever");
  EXPECT_EQ(shorten("cute golden retriever", ShortenScale::NounPhrase, o), "cute golden retriever");
}

TEST(Shorten, SingleNounUnchangedAtEveryScale) {
  MockChatModel chat;
  ShortenOptions o;
  o.chat = &chat;
  for (auto s : {ShortenScale::Noun, ShortenScale::NounPhrase, ShortenScale::ShortSentence}) {
    EXPECT_EQ(shorten("castle", s), "castle");
    EXPECT_EQ(shorten("castle", s, o), "castle");
  }
}

TEST(Shorten, FirstClauseFallback) {
  EXPECT_EQ(shorten("a red fox in snow, oil painting, 8k", ShortenScale::ShortSentence), "a red fox in snow");
  EXPECT_EQ(first_clause("price 2.5 dollars. next"), "price 2.5 dollars");
  EXPECT_EQ(first_clause(", , lead clause, x"), "lead clause");
  EXPECT_EQ(word_count(first_clause("one two three four five six seven eight nine ten eleven twelve thirteen")), 12u);
}

TEST(Shorten, ChatReplyIsUsedAndDeterministic) {
  class FirstFive : public ChatModel {
   protected:
    ChatResult do_complete(std::string_view prompt, std::uint64_t) override {
      auto line = std::string(prompt.substr(prompt.find("The prompt is: ") + 15));
      line = line.substr(0, line.find('\n'));
      auto words = split_whitespace(line);
      words.resize(std::min<std::size_t>(5, words.size()));
      return {join(words, " "), false};
    }
  } chat;
  ShortenOptions o;
  o.chat = &chat;
  o.seed = 3;
  const std::string p = "an astronaut riding a horse on the moon, digital art";
  auto a = shorten(p, ShortenScale::ShortSentence, o);
  EXPECT_EQ(a, "an astronaut riding a horse");
  EXPECT_EQ(a, shorten(p, ShortenScale::ShortSentence, o));
}

TEST(Shorten, RejectsEmpty) { EXPECT_THROW(shorten("  ", ShortenScale::Noun), ValidationError); }

TEST(Shorten, NeverLongerAndMonotoneAcrossScales) {
  MockChatModel chat;
  ShortenOptions o;
  o.chat = &chat;
  synth::Options so;
  so.users = 20;
  for (const auto& r : synth::histories(so)) {
    auto n = word_count(shorten(r.prompt_text, ShortenScale::Noun, o));
    auto np = word_count(shorten(r.prompt_text, ShortenScale::NounPhrase, o));
    auto ss = word_count(shorten(r.prompt_text, ShortenScale::ShortSentence, o));
    const auto in = word_count(r.prompt_text);
    EXPECT_GE(n, 1u);
    EXPECT_LE(n, np) << r.prompt_text;
    EXPECT_LE(np, ss) << r.prompt_text;
    EXPECT_LE(ss, in);
  }
}

TEST(Keywords, ToyOracle) {
  // tf("cat", A) = 2/3, df = 1, U = 2: idf = ln(3/2) + 1.
  auto kw = top_keywords(std::vector<TokenStream>{{"cat", "cat", "dog"}, {"dog"}}, 250);
  std::map<std::string, double> w;
  for (const auto& k : kw) w[k.term] = k.weight;
  EXPECT_NEAR(w.at("cat"), 0.9370, 5e-5);
  EXPECT_NEAR(w.at("cat"), (2.0 / 3.0) * (std::log(1.5) + 1.0), 1e-12);
  // dog: df = 2, idf = 1; best tf is 1 (user B).
  EXPECT_NEAR(w.at("dog"), 1.0, 1e-12);
  EXPECT_EQ(kw.size(), 2u);
  EXPECT_EQ(kw[0].term, "dog");
}

TEST(Keywords, BruteForceOracleOnSyntheticCorpus) {
  synth::Options so;
  so.users = 12;
  Corpus c = synth::to_corpus(synth::histories(so));
  std::vector<TokenStream> docs;
  for (const auto& [u, h] : c.users()) {
    TokenStream d;
    for (const auto& r : h.records) {
      auto t = tokenize(r.prompt_text);
      d.insert(d.end(), t.begin(), t.end());
    }
    docs.push_back(d);
  }
  std::map<std::string, double> oracle;
  for (const auto& d : docs) {
    std::map<std::string, double> counts;
    for (const auto& t : d) counts[t] += 1;
    for (const auto& [t, cnt] : counts) {
      int df = 0;
      for (const auto& e : docs) df += std::find(e.begin(), e.end(), t) != e.end();
      double v = cnt / d.size() * (std::log((docs.size() + 1.0) / (df + 1.0)) + 1.0);
      oracle[t] = std::max(oracle[t], v);
    }
  }
  auto kw = top_keywords(c, 1000000);
  ASSERT_EQ(kw.size(), oracle.size());
  for (std::size_t i = 0; i < kw.size(); ++i) {
    EXPECT_NEAR(kw[i].weight, oracle.at(kw[i].term), 1e-12);
    if (i > 0) {
      EXPECT_GE(kw[i - 1].weight, kw[i].weight);
      if (kw[i - 1].weight == kw[i].weight) EXPECT_LT(kw[i - 1].term, kw[i].term);
    }
  }
  EXPECT_EQ(top_keywords(c, 5).size(), 5u);
}

TEST(Keywords, Errors) {
  EXPECT_THROW(top_keywords(std::vector<TokenStream>{{"a"}}, 0), ValidationError);
  EXPECT_THROW(top_keywords(Corpus{}, 10), ValidationError);
}

TEST(Keywords, DropSetAndCsv) {
  std::unordered_set<std::string> drop{"the"};
  auto kw = top_keywords(std::vector<TokenStream>{{"the", "cat"}}, 10, &drop);
  ASSERT_EQ(kw.size(), 1u);
  EXPECT_EQ(kw[0].term, "cat");
  auto csv = keywords_to_csv(kw);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "term,weight");
  EXPECT_NE(csv.find("\ncat,"), std::string::npos);
}

TEST(LengthStats, Arithmetic) {
  auto one = length_stats(std::vector<std::string>{"a b c d e"});
  EXPECT_DOUBLE_EQ(one.mean_words, 5.0);
  EXPECT_EQ(one.min_words, 5u);
  EXPECT_EQ(one.max_words, 5u);
  auto two = length_stats(std::vector<std::string>{"w w w w w w w w w w", "x x x x x x x x x x x x x x x x x x x x"});
  EXPECT_DOUBLE_EQ(two.mean_words, 15.0);
  EXPECT_EQ(two.histogram.at(10), 1u);
  EXPECT_EQ(two.histogram.at(20), 1u);
  // Raw whitespace split, not the tokenizer.
  EXPECT_EQ(length_stats(std::vector<std::string>{"a , b"}).max_words, 3u);
}
