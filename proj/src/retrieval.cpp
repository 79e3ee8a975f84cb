#include "ppr/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "ppr/error.hpp"

namespace ppr {

using nlohmann::json;

std::string_view to_string(RetrievalMethod method) { return method == RetrievalMethod::BM25 ? "bm25" : "ebr"; }

RetrievalMethod parse_retrieval_method(std::string_view name) {
  std::string n = casefold(name);
  if (n == "bm25" || n == "sparse") return RetrievalMethod::BM25;
  if (n == "ebr" || n == "dense") return RetrievalMethod::EBR;
  throw ValidationError("unknown retrieval method: " + std::string(name));
}

SparseIndex SparseIndex::build(const UserHistory& history, Bm25Params params) {
  if (history.empty()) throw ValidationError("build_sparse: history is empty");
  SparseIndex idx;
  idx.user_id_ = history.user_id;
  idx.params_ = params;
  std::size_t total = 0;
  for (const auto& r : history.records) {
    TokenStream tokens = tokenize(r.prompt_text);
    idx.doc_lengths_[r.record_id] = tokens.size();
    total += tokens.size();
    std::map<std::string, std::size_t> tf;
    for (auto& t : tokens) ++tf[t];
    for (auto& [term, count] : tf) idx.postings_[term].push_back({r.record_id, count});
  }
  for (auto& [_, list] : idx.postings_) {
    std::sort(list.begin(), list.end(), [](const Posting& a, const Posting& b) { return a.record_id < b.record_id; });
  }
  idx.avgdl_ = static_cast<double>(total) / static_cast<double>(idx.doc_lengths_.size());
  return idx;
}

double SparseIndex::idf(const std::string& term) const {
  auto it = postings_.find(term);
  const double df = it == postings_.end() ? 0.0 : static_cast<double>(it->second.size());
  const double n = static_cast<double>(doc_lengths_.size());
  return std::log((n - df + 0.5) / (df + 0.5) + 1.0);
}

std::size_t SparseIndex::doc_length(const std::string& record_id) const {
  auto it = doc_lengths_.find(record_id);
  if (it == doc_lengths_.end()) throw NotFoundError("record not in index: " + record_id);
  return it->second;
}

double SparseIndex::score(const TokenStream& query, const std::string& record_id) const {
  const double dl = static_cast<double>(doc_length(record_id));
  const double norm = avgdl_ > 0.0 ? (1.0 - params_.b + params_.b * dl / avgdl_) : 1.0;
  double total = 0.0;
  for (const auto& term : query) {
    auto it = postings_.find(term);
    if (it == postings_.end()) continue;
    auto p = std::lower_bound(it->second.begin(), it->second.end(), record_id,
                              [](const Posting& a, const std::string& id) { return a.record_id < id; });
    if (p == it->second.end() || p->record_id != record_id) continue;
    const double tf = static_cast<double>(p->term_frequency);
    total += idf(term) * tf * (params_.k1 + 1.0) / (tf + params_.k1 * norm);
  }
  return total;
}

double bm25_score(const SparseIndex& index, const TokenStream& query, const std::string& record_id) {
  return index.score(query, record_id);
}

json SparseIndex::to_json() const {
  json postings = json::object();
  for (const auto& [term, list] : postings_) {
    json arr = json::array();
    for (const auto& p : list) arr.push_back({p.record_id, p.term_frequency});
    postings[term] = std::move(arr);
  }
  return {{"format", "ppr.sparse_index"},
          {"version", 1},
          {"user_id", user_id_},
          {"k1", params_.k1},
          {"b", params_.b},
          {"avgdl", avgdl_},
          {"doc_lengths", doc_lengths_},
          {"postings", std::move(postings)}};
}

SparseIndex SparseIndex::from_json(const json& j) {
  if (j.value("format", "") != "ppr.sparse_index" || j.value("version", 0) != 1) {
    throw ValidationError("not a version-1 sparse index sidecar");
  }
  SparseIndex idx;
  idx.user_id_ = j.at("user_id").get<std::string>();
  idx.params_.k1 = j.at("k1").get<double>();
  idx.params_.b = j.at("b").get<double>();
  idx.avgdl_ = j.at("avgdl").get<double>();
  idx.doc_lengths_ = j.at("doc_lengths").get<std::map<std::string, std::size_t>>();
  for (const auto& [term, arr] : j.at("postings").items()) {
    auto& list = idx.postings_[term];
    for (const auto& p : arr) list.push_back({p.at(0).get<std::string>(), p.at(1).get<std::size_t>()});
  }
  return idx;
}

DenseIndex DenseIndex::build(const UserHistory& history, TextEmbedder& embed) {
  if (history.empty()) throw ValidationError("build_dense: history is empty");
  DenseIndex idx;
  idx.user_id_ = history.user_id;
  for (const auto& r : history.records) {
    EmbeddingVector v;
    try {
      v = embed.embed_text(r.prompt_text);
    } catch (const ProviderError& e) {
      throw ProviderError("embedding record " + r.record_id + ": " + e.what(), e.retryable(), e.status());
    } catch (const ValidationError& e) {
      throw ProviderError("embedding record " + r.record_id + ": " + e.what(), false);
    }
    if (idx.dim_ == 0) idx.dim_ = v.dim();
    if (v.dim() != idx.dim_) throw ProviderError("embedding record " + r.record_id + ": dimension changed", false);
    idx.ids_.push_back(r.record_id);
    idx.vectors_.push_back(std::move(v));
  }
  return idx;
}

double DenseIndex::score(const EmbeddingVector& query, std::size_t i) const {
  const auto& v = vectors_[i].values;
  if (query.dim() != v.size()) throw ValidationError("dense search: query dimension mismatch");
  double dot = 0.0;
  for (std::size_t d = 0; d < v.size(); ++d) dot += v[d] * query.values[d];
  return dot;
}

json DenseIndex::to_json() const {
  json vectors = json::array();
  for (const auto& v : vectors_) vectors.push_back(v.values);
  return {{"format", "ppr.dense_index"}, {"version", 1}, {"user_id", user_id_},
          {"dim", dim_},                 {"ids", ids_},   {"vectors", std::move(vectors)}};
}

DenseIndex DenseIndex::from_json(const json& j) {
  if (j.value("format", "") != "ppr.dense_index" || j.value("version", 0) != 1) {
    throw ValidationError("not a version-1 dense index sidecar");
  }
  DenseIndex idx;
  idx.user_id_ = j.at("user_id").get<std::string>();
  idx.dim_ = j.at("dim").get<std::size_t>();
  idx.ids_ = j.at("ids").get<std::vector<std::string>>();
  for (const auto& v : j.at("vectors")) {
    EmbeddingVector e{v.get<std::vector<double>>()};
    if (e.dim() != idx.dim_) throw ValidationError("dense sidecar: vector dimension mismatch");
    idx.vectors_.push_back(std::move(e));
  }
  if (idx.vectors_.size() != idx.ids_.size()) throw ValidationError("dense sidecar: ids/vectors length mismatch");
  return idx;
}

namespace {

struct Candidate {
  std::size_t position;  // index in history; larger is more recent
  double score;
};

std::vector<RetrievalResult> rank(std::vector<Candidate> candidates, const UserHistory& history, std::size_t k) {
  auto recency = [&](const Candidate& a, const Candidate& b) {
    if (a.position != b.position) return a.position > b.position;
    return history.records[a.position].record_id < history.records[b.position].record_id;
  };
  std::sort(candidates.begin(), candidates.end(), [&](const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score > b.score;
    return recency(a, b);
  });
  // Equal scores reached by different summation orders differ in the last ulp.
  for (auto head = candidates.begin(); head != candidates.end();) {
    auto end = std::find_if(head, candidates.end(),
                            [&](const Candidate& c) { return head->score - c.score > kScoreTieTolerance; });
    std::sort(head, end, recency);
    head = end;
  }
  if (candidates.size() > k) candidates.resize(k);
  std::vector<RetrievalResult> out;
  out.reserve(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto& r = history.records[candidates[i].position];
    out.push_back({r.record_id, r.prompt_text, candidates[i].score, i + 1});
  }
  return out;
}

void check_k(std::size_t k) {
  if (k < 1) throw ValidationError("retrieve: k must be >= 1");
}

}  // namespace

std::vector<RetrievalResult> search(const SparseIndex& index, const UserHistory& history,
                                    std::string_view query_prompt, std::size_t k,
                                    const std::set<std::string>& exclude) {
  check_k(k);
  TokenStream query = tokenize(query_prompt);
  std::vector<Candidate> candidates;
  for (std::size_t i = 0; i < history.records.size(); ++i) {
    const auto& id = history.records[i].record_id;
    if (exclude.count(id)) continue;
    candidates.push_back({i, index.score(query, id)});
  }
  return rank(std::move(candidates), history, k);
}

std::vector<RetrievalResult> search(const DenseIndex& index, const UserHistory& history,
                                    std::string_view query_prompt, TextEmbedder& embed, std::size_t k,
                                    const std::set<std::string>& exclude) {
  check_k(k);
  std::unordered_map<std::string, std::size_t> slot;
  for (std::size_t i = 0; i < index.size(); ++i) slot[index.ids()[i]] = i;
  EmbeddingVector q = embed.embed_text(query_prompt);
  std::vector<Candidate> candidates;
  for (std::size_t i = 0; i < history.records.size(); ++i) {
    const auto& id = history.records[i].record_id;
    if (exclude.count(id)) continue;
    auto it = slot.find(id);
    if (it == slot.end()) throw NotFoundError("record not in dense index: " + id);
    candidates.push_back({i, index.score(q, it->second)});
  }
  return rank(std::move(candidates), history, k);
}

std::vector<RetrievalResult> retrieve(const UserHistory& history, std::string_view query_prompt,
                                      RetrievalMethod method, std::size_t k, const std::set<std::string>& exclude,
                                      TextEmbedder* embed) {
  check_k(k);
  UserHistory eligible;
  eligible.user_id = history.user_id;
  for (const auto& r : history.records) {
    if (!exclude.count(r.record_id)) eligible.records.push_back(r);
  }
  if (eligible.empty()) return {};
  if (method == RetrievalMethod::BM25) {
    return search(SparseIndex::build(eligible), eligible, query_prompt, k);
  }
  if (embed == nullptr) throw ValidationError("retrieve: EBR needs a text embedder");
  return search(DenseIndex::build(eligible, *embed), eligible, query_prompt, *embed, k);
}

}  // namespace ppr
