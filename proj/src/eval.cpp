#include "ppr/eval.hpp"

#include <atomic>
#include <charconv>
#include <cstdio>
#include <exception>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <thread>

#include "ppr/error.hpp"
#include "ppr/metrics.hpp"
#include "ppr/util.hpp"

namespace ppr {

using nlohmann::json;

namespace {

std::string fmt_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string fixed4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

template <typename T, typename F>
std::vector<T> list_from(const json& j, const char* key, F parse, std::vector<T> fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_array()) throw ValidationError(std::string("eval config: '") + key + "' must be an array");
  std::vector<T> out;
  for (const auto& item : j.at(key)) out.push_back(parse(item));
  return out;
}

std::string retriever_column(const RewriteMode& mode) {
  return mode.kind == RewriteMode::Kind::PersonalizedPR ? std::string(to_string(mode.retriever)) : "-";
}

struct Sample {
  const PromptRecord* record;
  std::string user_id;
};

struct Outcome {
  bool ok = false;
  double rouge = 0.0, pms = 0.0, align = 0.0;
  json log;
};

}  // namespace

std::string display_name(const RewriteMode& mode) {
  switch (mode.kind) {
    case RewriteMode::Kind::Passthrough:
      return "Shortened Prompt";
    case RewriteMode::Kind::GeneralPR:
      return "General PR";
    case RewriteMode::Kind::PersonalizedPR:
      return mode.icl_shots > 0 ? "Personalized PR + ICL" : "Personalized PR";
  }
  return "";
}

void EvalConfig::validate() const {
  if (methods.empty()) throw ValidationError("eval config: methods is empty");
  if (k < 1) throw ValidationError("eval config: k must be >= 1");
  if (shots < 1) throw ValidationError("eval config: shots must be >= 1");
  for (auto v : k_list)
    if (v < 1) throw ValidationError("eval config: k_list entries must be >= 1");
  for (auto v : shot_list)
    if (v < 1) throw ValidationError("eval config: shot_list entries must be >= 1");
  if (scales.empty()) throw ValidationError("eval config: scales is empty");
  if (workers < 1) throw ValidationError("eval config: workers must be >= 1");
  if (max_failure_rate < 0.0 || max_failure_rate > 1.0)
    throw ValidationError("eval config: max_failure_rate must be in [0, 1]");
  generation.validate();
}

EvalConfig EvalConfig::from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("eval config must be an object");
  EvalConfig c;
  auto mode = [](const json& v) { return RewriteMode::parse(v.get<std::string>()); };
  auto retr = [](const json& v) { return parse_retrieval_method(v.get<std::string>()); };
  auto scale = [](const json& v) { return parse_shorten_scale(v.get<std::string>()); };
  try {
    c.methods = list_from<RewriteMode>(j, "methods", mode, c.methods);
    c.retrievers = list_from<RetrievalMethod>(j, "retrievers", retr, c.retrievers);
    c.k_list = list_from<std::size_t>(j, "k_list", [](const json& v) { return v.get<std::size_t>(); }, c.k_list);
    c.shot_list = list_from<int>(j, "shot_list", [](const json& v) { return v.get<int>(); }, c.shot_list);
    c.scales = list_from<ShortenScale>(j, "scales", scale, c.scales);
    c.sweep_scales = list_from<ShortenScale>(j, "sweep_scales", scale, c.sweep_scales);
    c.sweep_methods = list_from<RewriteMode>(j, "sweep_methods", mode, c.sweep_methods);
    if (j.contains("k")) c.k = j.at("k").get<std::size_t>();
    if (j.contains("shots")) c.shots = j.at("shots").get<int>();
    if (j.contains("k_ablation_retriever")) c.k_ablation_retriever = retr(j.at("k_ablation_retriever"));
    if (j.contains("shorten_inputs")) c.shorten_inputs = j.at("shorten_inputs").get<bool>();
    if (j.contains("max_failure_rate")) c.max_failure_rate = j.at("max_failure_rate").get<double>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("workers")) c.workers = j.at("workers").get<std::size_t>();
    if (j.contains("generation")) {
      const auto& g = j.at("generation");
      if (g.contains("steps")) c.generation.steps = g.at("steps").get<int>();
      if (g.contains("guidance")) c.generation.guidance = g.at("guidance").get<double>();
      if (g.contains("scheduler")) c.generation.scheduler = g.at("scheduler").get<std::string>();
    }
    if (j.contains("providers")) c.providers = j.at("providers");
  } catch (const json::exception& e) {
    throw ValidationError(std::string("eval config: ") + e.what());
  }
  c.validate();
  return c;
}

json EvalConfig::to_json() const {
  json j;
  auto labels = [](const std::vector<RewriteMode>& ms) {
    json a = json::array();
    for (const auto& m : ms) a.push_back(m.label());
    return a;
  };
  j["methods"] = labels(methods);
  j["sweep_methods"] = labels(sweep_methods);
  j["retrievers"] = json::array();
  for (auto r : retrievers) j["retrievers"].push_back(std::string(to_string(r)));
  j["k_list"] = k_list;
  j["shot_list"] = shot_list;
  j["k"] = k;
  j["shots"] = shots;
  j["scales"] = json::array();
  for (auto s : scales) j["scales"].push_back(std::string(to_string(s)));
  j["sweep_scales"] = json::array();
  for (auto s : sweep_scales) j["sweep_scales"].push_back(std::string(to_string(s)));
  j["k_ablation_retriever"] = std::string(to_string(k_ablation_retriever));
  j["shorten_inputs"] = shorten_inputs;
  j["max_failure_rate"] = max_failure_rate;
  j["seed"] = seed;
  j["workers"] = workers;
  j["generation"] = {{"steps", generation.steps}, {"guidance", generation.guidance},
                     {"scheduler", generation.scheduler}};
  j["providers"] = providers;
  return j;
}

json to_json(const EvalRow& r) {
  return json{{"method", r.method},   {"retriever", r.retriever},     {"k", r.k},
              {"shots", r.shots},     {"scale", r.scale},             {"pms", r.pms},
              {"image_align", r.image_align}, {"rouge_l", r.rouge_l}, {"n", r.n_samples},
              {"failed", r.n_failed}};
}

EvalRow eval_row_from_json(const json& j) {
  try {
    EvalRow r;
    r.method = j.at("method").get<std::string>();
    r.retriever = j.at("retriever").get<std::string>();
    r.k = j.at("k").get<std::size_t>();
    r.shots = j.at("shots").get<int>();
    r.scale = j.at("scale").get<std::string>();
    r.pms = j.at("pms").get<double>();
    r.image_align = j.at("image_align").get<double>();
    r.rouge_l = j.at("rouge_l").get<double>();
    r.n_samples = j.at("n").get<std::size_t>();
    r.n_failed = j.at("failed").get<std::size_t>();
    return r;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("eval row: ") + e.what());
  }
}

Evaluator::Evaluator(const Rewriter& rewriter, EvalConfig config) : rewriter_(rewriter), config_(std::move(config)) {
  config_.validate();
}

EvalRun Evaluator::run_offline(const Corpus& corpus, const DatasetSplit& split) const {
  std::vector<EvalVariant> variants;
  for (const auto& m : config_.methods) variants.push_back({m, config_.k});
  return run(corpus, split, variants, config_.scales);
}

EvalRun Evaluator::run_scale_sweep(const Corpus& corpus, const DatasetSplit& split) const {
  std::vector<EvalVariant> variants;
  for (const auto& m : config_.sweep_methods) variants.push_back({m, config_.k});
  return run(corpus, split, variants, config_.sweep_scales);
}

EvalRun Evaluator::run_ablations(const Corpus& corpus, const DatasetSplit& split) const {
  std::vector<EvalVariant> variants;
  for (auto k : config_.k_list)
    variants.push_back({RewriteMode::personalized(config_.k_ablation_retriever, config_.shots), k});
  for (auto r : config_.retrievers)
    for (int s : config_.shot_list) variants.push_back({RewriteMode::personalized(r, s), config_.k});
  return run(corpus, split, variants, config_.scales);
}

EvalRun Evaluator::run(const Corpus& corpus, const DatasetSplit& split, const std::vector<EvalVariant>& variants,
                       const std::vector<ShortenScale>& scales) const {
  if (variants.empty() || scales.empty()) throw ValidationError("eval: nothing to run");
  const auto& providers = rewriter_.providers();

  // Samples in (user_id, record_id) order; the split must come from this corpus.
  std::vector<Sample> samples;
  for (const auto& [user, recs] : split.test) {
    const UserHistory* h = corpus.find_user(user);
    if (!h) throw ValidationError("eval: split user " + user + " is not in the corpus");
    std::map<std::string, const PromptRecord*> sorted;
    for (const auto& r : recs) {
      const PromptRecord* found = h->find(r.record_id);
      if (!found) throw ValidationError("eval: split record " + r.record_id + " is not in the corpus");
      sorted[r.record_id] = found;
    }
    for (const auto& [id, rec] : sorted) samples.push_back({rec, user});
  }
  if (samples.empty()) throw ValidationError("eval: split has no test samples");

  std::map<std::string, UserHistory> train;
  for (const auto& [user, recs] : split.train) train[user] = UserHistory{user, recs};
  for (const auto& s : samples)
    if (!train.count(s.user_id)) train[s.user_id] = UserHistory{s.user_id, {}};

  // Preferences from the train split, one per user.
  std::vector<std::string> users;
  for (const auto& [u, h] : train) users.push_back(u);
  std::vector<std::optional<UserPreference>> prefs(users.size());
  std::vector<std::string> pref_errors(users.size());

  const std::size_t cells = scales.size() * variants.size();
  std::vector<Outcome> outcomes(samples.size() * cells);

  auto parallel = [&](std::size_t n, auto&& fn) {
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mu;
    auto work = [&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mu);
          if (!error) error = std::current_exception();
        }
      }
    };
    std::size_t threads = std::min(config_.workers, n);
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(work);
    work();
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
  };

  parallel(users.size(), [&](std::size_t i) {
    const auto& h = train.at(users[i]);
    if (h.empty()) {
      pref_errors[i] = "user has no train history";
      return;
    }
    try {
      prefs[i] = rewriter_.summarize_preference(h, config_.seed);
    } catch (const ProviderError& e) {
      pref_errors[i] = e.what();
    }
  });
  std::map<std::string, std::size_t> user_index;
  for (std::size_t i = 0; i < users.size(); ++i) user_index[users[i]] = i;

  parallel(samples.size(), [&](std::size_t si) {
    const Sample& s = samples[si];
    const PromptRecord& rec = *s.record;
    const UserHistory& history = train.at(s.user_id);
    const std::set<std::string> held_out = split.test_ids(s.user_id);
    const std::size_t ui = user_index.at(s.user_id);

    GenerationParams gen = config_.generation;
    gen.seed = stable_hash({"t2i", rec.record_id}, config_.seed);
    ImageRef truth;
    truth.image_id = rec.record_id;
    truth.locator = rec.image_ref.value_or("");
    truth.provenance_prompt = rec.prompt_text;

    for (std::size_t sc = 0; sc < scales.size(); ++sc) {
      const std::string scale_name(to_string(scales[sc]));
      std::optional<std::string> x_t;
      std::string shorten_error;
      if (!config_.shorten_inputs) {
        x_t = rec.prompt_text;
      } else {
        try {
          ShortenOptions so;
          so.chat = providers.chat.get();
          so.seed = stable_hash({"shorten", rec.record_id, scale_name}, config_.seed);
          x_t = shorten(rec.prompt_text, scales[sc], so);
        } catch (const ProviderError& e) {
          shorten_error = e.what();
        }
      }

      for (std::size_t vi = 0; vi < variants.size(); ++vi) {
        const auto& v = variants[vi];
        Outcome& out = outcomes[si * cells + sc * variants.size() + vi];
        const bool personalized = v.mode.kind == RewriteMode::Kind::PersonalizedPR;
        json log{{"user_id", s.user_id},
                 {"record_id", rec.record_id},
                 {"scale", scale_name},
                 {"method", v.mode.label()},
                 {"retriever", retriever_column(v.mode)},
                 {"k", personalized ? v.k : 0},
                 {"shots", personalized ? v.mode.icl_shots : 0},
                 {"original", rec.prompt_text}};
        try {
          if (!x_t) throw ProviderError("shorten: " + shorten_error, false);
          log["x_t"] = *x_t;
          if (!prefs[ui]) throw ProviderError("preference: " + pref_errors[ui], false);
          RewriteOptions ro;
          ro.k = v.k;
          ro.exclude = held_out;
          ro.seed = stable_hash({"rewrite", rec.record_id, scale_name, v.mode.label()}, config_.seed);
          RewrittenPrompt rw = rewriter_.rewrite(history, *x_t, v.mode, ro);
          log["rewritten"] = rw.text;
          log["retrieved_ids"] = rw.retrieved;
          log["demo_ids"] = rw.demos_used;
          log["word_count"] = rw.word_count;
          log["over_limit"] = rw.over_limit;
          log["fell_back_to_general"] = rw.fell_back_to_general;
          ImageRef img = providers.generator->generate(rw.text, gen);
          log["image_id"] = img.image_id;
          out.rouge = rouge_l(rw.text, rec.prompt_text);
          out.pms = pms({PmsPair{img, *prefs[ui]}}, *providers.image, *providers.text);
          out.align = image_align({{img, truth}}, *providers.image);
          log["metrics"] = {{"rouge_l", out.rouge}, {"pms", out.pms}, {"image_align", out.align}};
          log["status"] = "ok";
          out.ok = true;
        } catch (const ProviderError& e) {
          log["status"] = "failed";
          log["error"] = e.what();
        }
        out.log = std::move(log);
      }
    }
  });

  EvalRun run;
  for (std::size_t sc = 0; sc < scales.size(); ++sc) {
    for (std::size_t vi = 0; vi < variants.size(); ++vi) {
      const auto& v = variants[vi];
      const bool personalized = v.mode.kind == RewriteMode::Kind::PersonalizedPR;
      EvalRow row;
      row.method = v.mode.label();
      row.retriever = retriever_column(v.mode);
      row.k = personalized ? v.k : 0;
      row.shots = personalized ? v.mode.icl_shots : 0;
      row.scale = std::string(to_string(scales[sc]));
      double sr = 0, sp = 0, sa = 0;
      for (std::size_t si = 0; si < samples.size(); ++si) {
        const Outcome& o = outcomes[si * cells + sc * variants.size() + vi];
        if (!o.ok) {
          ++row.n_failed;
          continue;
        }
        ++row.n_samples;
        sr += o.rouge;
        sp += o.pms;
        sa += o.align;
      }
      const double rate = static_cast<double>(row.n_failed) / static_cast<double>(samples.size());
      if (rate > config_.max_failure_rate) {
        throw Error("eval aborted: " + std::to_string(row.n_failed) + " of " + std::to_string(samples.size()) +
                    " samples failed for " + row.method + " at scale " + row.scale);
      }
      if (row.n_samples > 0) {
        const double n = static_cast<double>(row.n_samples);
        row.rouge_l = sr / n;
        row.pms = sp / n;
        row.image_align = sa / n;
      }
      run.rows.push_back(row);
    }
  }
  for (auto& o : outcomes) run.sample_log.push_back(std::move(o.log));
  return run;
}

ReportFormat parse_report_format(std::string_view name) {
  if (name == "csv") return ReportFormat::Csv;
  if (name == "json") return ReportFormat::Json;
  if (name == "md" || name == "markdown") return ReportFormat::Markdown;
  throw ValidationError("unknown report format: " + std::string(name));
}

std::string render_report(const std::vector<EvalRow>& rows, ReportFormat format) {
  if (rows.empty()) throw ValidationError("report: no rows");
  std::ostringstream out;
  switch (format) {
    case ReportFormat::Csv:
      out << "method,retriever,k,shots,scale,PMS,Image-Align,ROUGE-L,n,failed\n";
      for (const auto& r : rows) {
        out << r.method << ',' << r.retriever << ',' << r.k << ',' << r.shots << ',' << r.scale << ','
            << fmt_double(r.pms) << ',' << fmt_double(r.image_align) << ',' << fmt_double(r.rouge_l) << ','
            << r.n_samples << ',' << r.n_failed << '\n';
      }
      break;
    case ReportFormat::Json: {
      json a = json::array();
      for (const auto& r : rows) a.push_back(to_json(r));
      out << json{{"rows", a}}.dump(2) << '\n';
      break;
    }
    case ReportFormat::Markdown:
      out << "| Method | Retriever | k | Shots | Scale | PMS | Image-Align | ROUGE-L | n | Failed |\n";
      out << "|---|---|---|---|---|---|---|---|---|---|\n";
      for (const auto& r : rows) {
        RewriteMode m = RewriteMode::parse(r.method);
        auto dash = [](std::size_t v) { return v == 0 ? std::string("-") : std::to_string(v); };
        std::string retr = r.retriever == "-" ? "-" : (r.retriever == "bm25" ? "BM25" : "EBR");
        out << "| " << display_name(m) << " | " << retr << " | " << dash(r.k) << " | "
            << dash(static_cast<std::size_t>(r.shots)) << " | " << r.scale << " | " << fixed4(r.pms) << " | "
            << fixed4(r.image_align) << " | " << fixed4(r.rouge_l) << " | " << r.n_samples << " | " << r.n_failed
            << " |\n";
      }
      break;
  }
  return out.str();
}

void emit_report(const std::vector<EvalRow>& rows, ReportFormat format, const std::string& path) {
  write_file(path, render_report(rows, format));
}

std::vector<EvalRow> parse_json_report(const json& j) {
  if (!j.contains("rows") || !j.at("rows").is_array()) throw ValidationError("report: missing 'rows' array");
  std::vector<EvalRow> rows;
  for (const auto& r : j.at("rows")) rows.push_back(eval_row_from_json(r));
  return rows;
}

std::string render_sample_log(const std::vector<json>& log) {
  std::string out;
  for (const auto& entry : log) {
    out += entry.dump();
    out += '\n';
  }
  return out;
}

}  // namespace ppr
