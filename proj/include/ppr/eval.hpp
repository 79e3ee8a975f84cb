#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "ppr/corpus.hpp"
#include "ppr/providers.hpp"
#include "ppr/retrieval.hpp"
#include "ppr/rewrite.hpp"
#include "ppr/text.hpp"

namespace ppr {

struct EvalConfig {
  /// Headline grid (one row per method).
  std::vector<RewriteMode> methods = {
      RewriteMode::passthrough(),
      RewriteMode::general(),
      RewriteMode::personalized(RetrievalMethod::BM25, 0),
      RewriteMode::personalized(RetrievalMethod::EBR, 0),
      RewriteMode::personalized(RetrievalMethod::BM25, 1),
      RewriteMode::personalized(RetrievalMethod::EBR, 1),
  };
  std::vector<RetrievalMethod> retrievers = {RetrievalMethod::BM25, RetrievalMethod::EBR};
  std::vector<std::size_t> k_list = {1, 3, 5, 7};
  std::vector<int> shot_list = {1, 3, 5};
  std::size_t k = 3;
  int shots = 1;
  /// Scales used by run_offline and run_ablations.
  std::vector<ShortenScale> scales = {ShortenScale::ShortSentence};
  std::vector<ShortenScale> sweep_scales = {ShortenScale::Noun, ShortenScale::NounPhrase,
                                            ShortenScale::ShortSentence};
  /// Methods compared at every scale of the sweep.
  std::vector<RewriteMode> sweep_methods = {RewriteMode::passthrough(),
                                            RewriteMode::personalized(RetrievalMethod::EBR, 1)};
  RetrievalMethod k_ablation_retriever = RetrievalMethod::EBR;
  /// false: x_t is the original prompt (no shortening).
  bool shorten_inputs = true;
  double max_failure_rate = 0.10;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  GenerationParams generation;
  nlohmann::json providers = nlohmann::json::object();

  void validate() const;
  /// Reads the keys written by to_json; absent keys keep their defaults.
  static EvalConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct EvalRow {
  std::string method;     // RewriteMode::label()
  std::string retriever;  // "bm25", "ebr" or "-"
  std::size_t k = 0;      // 0 when the method does not retrieve
  int shots = 0;
  std::string scale;
  double pms = 0.0;
  double image_align = 0.0;
  double rouge_l = 0.0;
  std::size_t n_samples = 0;
  std::size_t n_failed = 0;

  bool operator==(const EvalRow&) const = default;
};

nlohmann::json to_json(const EvalRow& row);
EvalRow eval_row_from_json(const nlohmann::json& j);

struct EvalRun {
  std::vector<EvalRow> rows;
  /// One entry per (sample, scale, method) in (user_id, record_id) order.
  std::vector<nlohmann::json> sample_log;
};

/// One evaluated configuration: a rewrite mode plus its retrieval depth.
struct EvalVariant {
  RewriteMode mode;
  std::size_t k = 3;
};

class Evaluator {
 public:
  Evaluator(const Rewriter& rewriter, EvalConfig config);

  EvalRun run_offline(const Corpus& corpus, const DatasetSplit& split) const;
  EvalRun run_scale_sweep(const Corpus& corpus, const DatasetSplit& split) const;
  /// Top-k rows (k_list, 1-shot) followed by shot rows (retrievers x shot_list, k).
  EvalRun run_ablations(const Corpus& corpus, const DatasetSplit& split) const;

  EvalRun run(const Corpus& corpus, const DatasetSplit& split, const std::vector<EvalVariant>& variants,
              const std::vector<ShortenScale>& scales) const;

  const EvalConfig& config() const { return config_; }

 private:
  const Rewriter& rewriter_;
  EvalConfig config_;
};

enum class ReportFormat { Csv, Json, Markdown };
ReportFormat parse_report_format(std::string_view name);

/// Column order: method, retriever, k, shots, scale, PMS, Image-Align, ROUGE-L, n, failed.
std::string render_report(const std::vector<EvalRow>& rows, ReportFormat format);
/// Throws ValidationError on empty rows, Error when the path cannot be written.
void emit_report(const std::vector<EvalRow>& rows, ReportFormat format, const std::string& path);
std::vector<EvalRow> parse_json_report(const nlohmann::json& j);

std::string render_sample_log(const std::vector<nlohmann::json>& log);

/// Table name used in markdown output for a mode ("Personalized PR + ICL", ...).
std::string display_name(const RewriteMode& mode);

}  // namespace ppr
