#pragma once

#include <cstddef>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "ppr/corpus.hpp"
#include "ppr/providers.hpp"
#include "ppr/text.hpp"

namespace ppr {

enum class RetrievalMethod { BM25, EBR };

std::string_view to_string(RetrievalMethod method);
RetrievalMethod parse_retrieval_method(std::string_view name);

struct Bm25Params {
  double k1 = 1.2;
  double b = 0.75;

  bool operator==(const Bm25Params&) const = default;
};

struct Posting {
  std::string record_id;
  std::size_t term_frequency = 0;

  bool operator==(const Posting&) const = default;
};

/// Inverted index over one user's tokenized prompts.
class SparseIndex {
 public:
  /// Throws ValidationError on an empty history.
  static SparseIndex build(const UserHistory& history, Bm25Params params = {});

  /// Okapi BM25 with idf = ln((N - df + 0.5) / (df + 0.5) + 1). Each query
  /// token occurrence contributes separately. Throws NotFoundError for an
  /// unknown record id.
  double score(const TokenStream& query, const std::string& record_id) const;

  double idf(const std::string& term) const;
  std::size_t doc_count() const { return doc_lengths_.size(); }
  double avgdl() const { return avgdl_; }
  std::size_t doc_length(const std::string& record_id) const;
  const std::map<std::string, std::vector<Posting>>& postings() const { return postings_; }
  const std::map<std::string, std::size_t>& doc_lengths() const { return doc_lengths_; }
  const Bm25Params& params() const { return params_; }

  /// Versioned JSON sidecar.
  nlohmann::json to_json() const;
  static SparseIndex from_json(const nlohmann::json& j);

  bool operator==(const SparseIndex&) const = default;

 private:
  std::string user_id_;
  Bm25Params params_;
  std::map<std::string, std::vector<Posting>> postings_;  // sorted by record_id
  std::map<std::string, std::size_t> doc_lengths_;
  double avgdl_ = 0.0;
};

double bm25_score(const SparseIndex& index, const TokenStream& query, const std::string& record_id);

/// Unit-norm embeddings of one user's prompts, exhaustive search.
class DenseIndex {
 public:
  /// Throws ValidationError on empty history; ProviderError (naming the
  /// record) on embedding failure or a zero vector.
  static DenseIndex build(const UserHistory& history, TextEmbedder& embed);

  std::size_t size() const { return ids_.size(); }
  std::size_t dim() const { return dim_; }
  const std::vector<std::string>& ids() const { return ids_; }
  const EmbeddingVector& vector(std::size_t i) const { return vectors_[i]; }
  /// Dot product of unit vectors, i.e. the cosine.
  double score(const EmbeddingVector& query, std::size_t i) const;

  nlohmann::json to_json() const;
  static DenseIndex from_json(const nlohmann::json& j);

 private:
  std::string user_id_;
  std::size_t dim_ = 0;
  std::vector<std::string> ids_;
  std::vector<EmbeddingVector> vectors_;
};

struct RetrievalResult {
  std::string record_id;
  std::string prompt_text;
  double score = 0.0;
  std::size_t rank = 0;  // 1-based
};

/// Scores this close to the best score of a run count as tied.
inline constexpr double kScoreTieTolerance = 1e-12;

/// Ranks `history` for `query_prompt` and returns the top k. Records in
/// `exclude` are removed before the index is built. Ties go to the more
/// recent record, then to the smaller record id. An empty eligible history
/// yields an empty list. Throws ValidationError when k < 1.
std::vector<RetrievalResult> retrieve(const UserHistory& history, std::string_view query_prompt,
                                      RetrievalMethod method, std::size_t k = 3,
                                      const std::set<std::string>& exclude = {}, TextEmbedder* embed = nullptr);

/// Same ranking against prebuilt indexes (candidates in `exclude` skipped).
std::vector<RetrievalResult> search(const SparseIndex& index, const UserHistory& history,
                                    std::string_view query_prompt, std::size_t k,
                                    const std::set<std::string>& exclude = {});
std::vector<RetrievalResult> search(const DenseIndex& index, const UserHistory& history,
                                    std::string_view query_prompt, TextEmbedder& embed, std::size_t k,
                                    const std::set<std::string>& exclude = {});

}  // namespace ppr
