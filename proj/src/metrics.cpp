#include "ppr/metrics.hpp"

#include <algorithm>
#include <sstream>

#include "ppr/error.hpp"
#include "ppr/util.hpp"

namespace ppr {

std::size_t lcs_length(const TokenStream& a, const TokenStream& b) {
  const TokenStream& longer = a.size() >= b.size() ? a : b;
  const TokenStream& shorter = a.size() >= b.size() ? b : a;
  std::vector<std::size_t> prev(shorter.size() + 1, 0), cur(shorter.size() + 1, 0);
  for (const auto& x : longer) {
    for (std::size_t j = 1; j <= shorter.size(); ++j) {
      cur[j] = x == shorter[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[shorter.size()];
}

double rouge_l_tokens(const TokenStream& candidate, const TokenStream& reference, double beta) {
  if (candidate.empty() || reference.empty()) return 0.0;
  const double lcs = static_cast<double>(lcs_length(candidate, reference));
  if (lcs == 0.0) return 0.0;
  const double r = lcs / static_cast<double>(reference.size());
  const double p = lcs / static_cast<double>(candidate.size());
  const double b2 = beta * beta;
  return (1.0 + b2) * r * p / (r + b2 * p);
}

double rouge_l(std::string_view candidate, std::string_view reference, double beta) {
  if (trim(reference).empty()) throw ValidationError("rouge_l: reference is empty");
  return rouge_l_tokens(tokenize(candidate), tokenize(reference), beta);
}

double preference_match(const ImageRef& generated, const UserPreference& preference, ImageEmbedder& image_embed,
                        TextEmbedder& text_embed) {
  EmbeddingVector img = image_embed.embed_image(generated);
  EmbeddingVector pref = text_embed.embed_text(render_preference(preference));
  return std::max(cosine(img, pref), 0.0);
}

double pms(const std::vector<PmsPair>& pairs, ImageEmbedder& image_embed, TextEmbedder& text_embed, double w) {
  if (pairs.empty()) throw ValidationError("pms: no pairs");
  double total = 0.0;
  for (const auto& [image, pref] : pairs) {
    try {
      total += preference_match(image, pref, image_embed, text_embed);
    } catch (const ProviderError& e) {
      throw ProviderError("pms for user " + pref.user_id + ": " + e.what(), e.retryable(), e.status());
    }
  }
  return w * total / static_cast<double>(pairs.size());
}

double image_align(const std::vector<std::pair<ImageRef, ImageRef>>& pairs, ImageEmbedder& image_embed) {
  if (pairs.empty()) throw ValidationError("image_align: no pairs");
  double total = 0.0;
  for (const auto& [gen, truth] : pairs) {
    total += std::max(cosine(image_embed.embed_image(gen), image_embed.embed_image(truth)), 0.0);
  }
  return total / static_cast<double>(pairs.size());
}

SimilarityMatrix preference_similarity_matrix(const std::vector<std::string>& users,
                                              const std::map<std::string, std::vector<std::string>>& histories,
                                              const std::map<std::string, UserPreference>& preferences,
                                              TextEmbedder& embed) {
  std::vector<std::vector<EmbeddingVector>> history_vectors;
  std::vector<EmbeddingVector> pref_vectors;
  for (const auto& u : users) {
    auto h = histories.find(u);
    if (h == histories.end() || h->second.empty()) throw NotFoundError("no history prompts for user " + u);
    auto p = preferences.find(u);
    if (p == preferences.end() || p->second.phrases.empty()) throw NotFoundError("no preference for user " + u);
    std::vector<EmbeddingVector> vs;
    for (const auto& q : h->second) vs.push_back(embed.embed_text(q));
    history_vectors.push_back(std::move(vs));
    pref_vectors.push_back(embed.embed_text(render_preference(p->second)));
  }
  SimilarityMatrix m;
  m.users = users;
  m.values.assign(users.size(), std::vector<double>(users.size(), 0.0));
  for (std::size_t u = 0; u < users.size(); ++u) {
    for (std::size_t v = 0; v < users.size(); ++v) {
      double sum = 0.0;
      for (const auto& q : history_vectors[u]) sum += cosine(q, pref_vectors[v]);
      m.values[u][v] = sum / static_cast<double>(history_vectors[u].size());
    }
  }
  return m;
}

std::string SimilarityMatrix::to_csv() const {
  std::ostringstream out;
  out.precision(10);
  out << "user";
  for (const auto& u : users) out << ',' << u;
  out << '\n';
  for (std::size_t i = 0; i < users.size(); ++i) {
    out << users[i];
    for (double v : values[i]) out << ',' << v;
    out << '\n';
  }
  return out.str();
}

nlohmann::json MetricReport::to_json() const {
  return {{"pms", pms}, {"image_align", image_align}, {"rouge_l", rouge_l}, {"sample_count", sample_count}};
}

}  // namespace ppr
