#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "ppr/error.hpp"
#include "ppr/retrieval.hpp"
#include "ppr/synth.hpp"
#include "ppr/util.hpp"

using namespace ppr;

namespace {

UserHistory history_of(const std::vector<std::string>& prompts, const std::string& user = "u") {
  UserHistory h{user, {}};
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    PromptRecord r;
    r.record_id = user + "-" + std::to_string(100 + i);
    r.user_id = user;
    r.prompt_text = prompts[i];
    r.sequence = i;
    h.records.push_back(r);
  }
  return h;
}

UserHistory synthetic_user(std::size_t records) {
  synth::Options o;
  o.users = 1;
  o.min_records = records;
  o.max_records = records;
  auto c = synth::to_corpus(synth::histories(o));
  return c.users().begin()->second;
}

}  // namespace

TEST(Bm25, ParamsDefault) {
  Bm25Params p;
  EXPECT_DOUBLE_EQ(p.k1, 1.2);
  EXPECT_DOUBLE_EQ(p.b, 0.75);
}

TEST(Bm25, HandComputedTwoDocCase) {
  auto h = history_of({"cat dog", "dog dog bird"});
  auto idx = SparseIndex::build(h);
  // N=2, df(cat)=1: idf = ln(1.5/1.5 + 1) = ln 2; avgdl = 2.5, |d0| = 2.
  const double norm = 1 - 0.75 + 0.75 * 2 / 2.5;
  const double expect = std::log(2.0) * 1 * 2.2 / (1 + 1.2 * norm);
  EXPECT_NEAR(bm25_score(idx, {"cat"}, "u-100"), expect, 1e-12);
  EXPECT_EQ(bm25_score(idx, {"cat"}, "u-101"), 0.0);
  EXPECT_NEAR(idx.avgdl(), 2.5, 1e-15);
  EXPECT_THROW(idx.score({"cat"}, "nope"), NotFoundError);
}

TEST(Bm25, RepeatedQueryTermsCountEachTime) {
  auto h = history_of({"cat dog", "bird"});
  auto idx = SparseIndex::build(h);
  EXPECT_NEAR(bm25_score(idx, {"cat", "cat"}, "u-100"), 2 * bm25_score(idx, {"cat"}, "u-100"), 1e-12);
}

TEST(Bm25, MatchesOracleOnSyntheticHistory) {
  auto h = synthetic_user(40);
  std::vector<std::vector<std::string>> docs;
  for (const auto& r : h.records) docs.push_back(tokenize(r.prompt_text));
  auto idx = SparseIndex::build(h);
  Rng rng(4);
  for (int q = 0; q < 30; ++q) {
    auto query = tokenize(h.records[uniform_below(rng, h.size())].prompt_text);
    query.push_back("unseen");
    for (std::size_t d = 0; d < docs.size(); ++d)
      EXPECT_NEAR(bm25_score(idx, query, h.records[d].record_id), oracle::bm25(docs, query, d), 1e-9);
  }
}

TEST(Bm25, SidecarRoundTrip) {
  auto idx = SparseIndex::build(synthetic_user(25));
  auto j = idx.to_json();
  EXPECT_EQ(j.at("format"), "ppr.sparse_index");
  EXPECT_EQ(SparseIndex::from_json(nlohmann::json::parse(j.dump())), idx);
  j["version"] = 99;
  EXPECT_THROW(SparseIndex::from_json(j), std::exception);
}

TEST(Retrieve, Bm25EqualsExhaustiveSort) {
  auto h = synthetic_user(30);
  std::vector<std::vector<std::string>> docs;
  for (const auto& r : h.records) docs.push_back(tokenize(r.prompt_text));
  for (const char* q : {"castle in the forest", "watercolor cat", "dragon"}) {
    std::vector<double> scores;
    for (std::size_t d = 0; d < docs.size(); ++d) scores.push_back(oracle::bm25(docs, tokenize(q), d));
    for (std::size_t k : {1u, 3u, 5u, 7u}) {
      auto got = retrieve(h, q, RetrievalMethod::BM25, k);
      auto want = oracle::rank_all(h, scores, k);
      ASSERT_EQ(got.size(), want.size());
      for (std::size_t i = 0; i < got.size(); ++i) {
        EXPECT_EQ(got[i].record_id, want[i].id);
        EXPECT_EQ(got[i].rank, i + 1);
      }
    }
  }
}

TEST(Retrieve, UlpLevelScoreDifferencesAreTies) {
  // Same cosine reached by different summation orders.
  auto h = history_of({"a b", "c d", "a b"});
  EXPECT_EQ(retrieve(h, "a b", RetrievalMethod::BM25, 1).at(0).record_id, "u-102");
}

TEST(Retrieve, TiesPreferMoreRecentHistory) {
  auto h = history_of({"same text", "other", "same text"});
  auto got = retrieve(h, "same text", RetrievalMethod::BM25, 2);
  ASSERT_EQ(got.size(), 2u);
  EXPECT_EQ(got[0].record_id, "u-102");
  EXPECT_EQ(got[1].record_id, "u-100");
}

TEST(Retrieve, DenseExactAndIdenticalPromptFirst) {
  MockTextEmbedder emb;
  auto h = synthetic_user(35);
  auto results = retrieve(h, h.records[7].prompt_text, RetrievalMethod::EBR, 5, {}, &emb);
  ASSERT_FALSE(results.empty());
  EXPECT_NEAR(results[0].score, 1.0, 1e-6);
  EXPECT_EQ(h.find(results[0].record_id)->prompt_text, h.records[7].prompt_text);
  std::vector<double> scores;
  auto q = emb.embed_text(h.records[7].prompt_text);
  for (const auto& r : h.records) scores.push_back(oracle::cos(q.values, emb.embed_text(r.prompt_text).values));
  auto want = oracle::rank_all(h, scores, 5);
  for (std::size_t i = 0; i < want.size(); ++i) {
    EXPECT_EQ(results[i].record_id, want[i].id);
    EXPECT_NEAR(results[i].score, want[i].score, 1e-12);
  }
}

TEST(Retrieve, ExcludeAndBounds) {
  auto h = history_of({"a cat", "a dog", "a cat again"});
  auto got = retrieve(h, "cat", RetrievalMethod::BM25, 7, {"u-100", "u-102"});
  ASSERT_EQ(got.size(), 1u);
  EXPECT_EQ(got[0].record_id, "u-101");
  EXPECT_TRUE(retrieve(h, "cat", RetrievalMethod::BM25, 3, {"u-100", "u-101", "u-102"}).empty());
  EXPECT_THROW(retrieve(h, "cat", RetrievalMethod::BM25, 0), ValidationError);
  EXPECT_THROW(retrieve(h, "cat", RetrievalMethod::EBR, 1), ValidationError);
  EXPECT_EQ(retrieve(h, "cat", RetrievalMethod::BM25, 10).size(), 3u);
}

TEST(Retrieve, DuplicatesAreReturnedAsStored) {
  auto h = history_of({"neon city", "neon city", "forest"});
  auto got = retrieve(h, "neon city", RetrievalMethod::BM25, 2);
  ASSERT_EQ(got.size(), 2u);
  EXPECT_EQ(got[0].prompt_text, got[1].prompt_text);
}

TEST(Retrieve, MethodNames) {
  EXPECT_EQ(parse_retrieval_method("BM25"), RetrievalMethod::BM25);
  EXPECT_EQ(parse_retrieval_method("dense"), RetrievalMethod::EBR);
  EXPECT_THROW(parse_retrieval_method("tfidf"), ValidationError);
}

TEST(DenseIndex, SidecarRoundTrip) {
  MockTextEmbedder emb;
  auto h = synthetic_user(20);
  auto idx = DenseIndex::build(h, emb);
  auto back = DenseIndex::from_json(nlohmann::json::parse(idx.to_json().dump()));
  EXPECT_EQ(back.ids(), idx.ids());
  auto a = search(idx, h, "castle", emb, 3);
  auto b = search(back, h, "castle", emb, 3);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].record_id, b[i].record_id);
}
