#include <gtest/gtest.h>

#include <set>

#include "ppr/util.hpp"

using namespace ppr;

TEST(Util, Fnv1aKnownVectors) {
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(fnv1a64("foobar"), 0x85944171f73967e8ULL);
}

TEST(Util, StableHashSeparatesParts) {
  EXPECT_NE(stable_hash({"ab", "c"}), stable_hash({"a", "bc"}));
  EXPECT_EQ(stable_hash({"x", "y"}, 3), stable_hash({"x", "y"}, 3));
  EXPECT_NE(stable_hash({"x", "y"}, 3), stable_hash({"x", "y"}, 4));
}

TEST(Util, UniformBelowStaysInRange) {
  Rng rng(1);
  std::vector<int> counts(7, 0);
  for (int i = 0; i < 7000; ++i) {
    auto v = uniform_below(rng, 7);
    ASSERT_LT(v, 7u);
    ++counts[v];
  }
  for (int c : counts) EXPECT_GT(c, 800);
}

TEST(Util, SampleIndicesDistinct) {
  Rng rng(9);
  auto idx = sample_indices(rng, 20, 20);
  std::set<std::size_t> s(idx.begin(), idx.end());
  EXPECT_EQ(s.size(), 20u);
  EXPECT_EQ(*s.rbegin(), 19u);
  EXPECT_EQ(sample_indices(rng, 3, 4).size(), 3u);
}

TEST(Util, TrimAndSplit) {
  EXPECT_EQ(trim("  a b \t\n"), "a b");
  EXPECT_EQ(trim("\xC2\xA0x\xE3\x80\x80"), "x");
  EXPECT_EQ(split_whitespace(" a  b\tc "), (std::vector<std::string>{"a", "b", "c"}));
  EXPECT_EQ(word_count("one, two three"), 3u);
  EXPECT_EQ(join({"a", "b"}, ", "), "a, b");
  EXPECT_EQ(hex64(0xabcULL), "0000000000000abc");
}
