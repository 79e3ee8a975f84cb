#include <gtest/gtest.h>

#include <map>
#include <set>
#include <sstream>

#include "ppr/corpus.hpp"
#include "ppr/synth.hpp"
#include "ppr/text.hpp"
#include "ppr/util.hpp"

using namespace ppr;

TEST(Synth, HistoriesPassIngestThresholds) {
  synth::Options o;
  o.users = 30;
  auto records = synth::histories(o);
  std::ostringstream out;
  export_jsonl(synth::to_corpus(records), out);
  std::istringstream in(out.str());
  auto res = ingest_jsonl(in);
  EXPECT_EQ(res.summary.users_kept, 30u);
  EXPECT_EQ(res.summary.users_dropped, 0u);
}

TEST(Synth, BundledCorporaMatchGenerator) {
  auto check = [](const std::string& file, std::size_t users, std::uint64_t seed) {
    synth::Options o;
    o.users = users;
    o.seed = seed;
    std::ostringstream out;
    export_jsonl(synth::to_corpus(synth::histories(o)), out);
    EXPECT_EQ(read_file(std::string(PPR_SOURCE_DIR) + "/data/" + file), out.str()) << file;
  };
  check("synthetic_10users.jsonl", 10, 1);
  check("synthetic_50users.jsonl", 50, 2);
}

TEST(Synth, StyleTokensAreUserPrivate) {
  auto records = synth::style_oracle_histories(200, 3);
  std::map<std::string, std::set<std::string>> owners;
  for (const auto& r : records)
    for (const auto& t : tokenize(r.prompt_text)) owners[t].insert(r.user_id);
  for (std::size_t u = 0; u < 200; ++u) {
    for (const auto& t : synth::style_oracle_tokens(u)) {
      ASSERT_EQ(owners[t].size(), 1u) << t;
      EXPECT_EQ(tokenize(t), TokenStream{t});
    }
  }
}

TEST(Synth, DatasetScaleCounts) {
  auto records = synth::dataset_scale_histories(11);
  EXPECT_EQ(records.size(), 300237u);
  Corpus c = synth::to_corpus(records);
  EXPECT_EQ(c.user_count(), 3115u);
  for (const auto& [u, h] : c.users()) EXPECT_GE(h.size(), 18u);
}
