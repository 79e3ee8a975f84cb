#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "ppr/providers.hpp"
#include "ppr/rewrite.hpp"
#include "ppr/text.hpp"

namespace ppr {

/// Longest common subsequence length, O(|a|*|b|) time, O(min) memory.
std::size_t lcs_length(const TokenStream& a, const TokenStream& b);

/// LCS F-measure with recall weight beta: F = (1+b^2) R P / (R + b^2 P),
/// where R = LCS/|reference|, P = LCS/|candidate|. 0 when either side has
/// no tokens after tokenization. Throws ValidationError on a blank reference.
double rouge_l(std::string_view candidate, std::string_view reference, double beta = 5.0);
double rouge_l_tokens(const TokenStream& candidate, const TokenStream& reference, double beta = 5.0);

constexpr double kPmsScale = 2.5;

struct PmsPair {
  ImageRef generated;
  UserPreference preference;
};

/// Per-sample clamped cosine max(cos(Em(I), Em(P)), 0).
double preference_match(const ImageRef& generated, const UserPreference& preference, ImageEmbedder& image_embed,
                        TextEmbedder& text_embed);

/// (w / N) * sum of clamped cosines. Throws ValidationError on an empty
/// list; provider failures are rethrown naming the user.
double pms(const std::vector<PmsPair>& pairs, ImageEmbedder& image_embed, TextEmbedder& text_embed,
           double w = kPmsScale);

/// Mean of max(cos(Em(generated), Em(ground_truth)), 0).
double image_align(const std::vector<std::pair<ImageRef, ImageRef>>& pairs, ImageEmbedder& image_embed);

struct SimilarityMatrix {
  std::vector<std::string> users;            // row and column order
  std::vector<std::vector<double>> values;   // values[u][v]: u's histories vs v's preference

  std::string to_csv() const;
};

/// M[u][v] = mean over u's history prompts q of cos(Em(q), Em(render(P_v))).
/// Throws NotFoundError when a user lacks history or preference.
SimilarityMatrix preference_similarity_matrix(const std::vector<std::string>& users,
                                              const std::map<std::string, std::vector<std::string>>& histories,
                                              const std::map<std::string, UserPreference>& preferences,
                                              TextEmbedder& embed);

struct MetricReport {
  double pms = 0.0;
  double image_align = 0.0;
  double rouge_l = 0.0;
  std::size_t sample_count = 0;

  nlohmann::json to_json() const;
};

}  // namespace ppr
