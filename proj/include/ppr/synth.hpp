#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "ppr/corpus.hpp"

namespace ppr::synth {

struct Options {
  std::size_t users = 10;
  std::size_t min_records = 18;
  std::size_t max_records = 40;
  std::uint64_t seed = 1;
  bool timestamps = true;
};

/// Plausible text-to-image histories: each user favours a few styles from a
/// shared vocabulary and mixes subjects, scenes and quality tags. Every user
/// passes the default ingest thresholds.
std::vector<PromptRecord> histories(const Options& options);

/// Corpus where every user owns three invented style tokens that appear in
/// every one of their prompts and in no other user's prompts.
std::vector<PromptRecord> style_oracle_histories(std::size_t users, std::uint64_t seed,
                                                 std::size_t records_per_user = 24);

/// The three style tokens `style_oracle_histories` assigns to user index `u`.
std::vector<std::string> style_oracle_tokens(std::size_t u);

/// Large corpus with exactly `users` users and `records` records (defaults
/// mirror the published dataset size), every user holding >= 18 records.
std::vector<PromptRecord> dataset_scale_histories(std::uint64_t seed, std::size_t users = 3115,
                                                  std::size_t records = 300237);

Corpus to_corpus(const std::vector<PromptRecord>& records);

}  // namespace ppr::synth
