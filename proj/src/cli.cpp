#include "ppr/cli.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ppr/config.hpp"
#include "ppr/corpus.hpp"
#include "ppr/error.hpp"
#include "ppr/eval.hpp"
#include "ppr/metrics.hpp"
#include "ppr/providers.hpp"
#include "ppr/retrieval.hpp"
#include "ppr/rewrite.hpp"
#include "ppr/service.hpp"
#include "ppr/text.hpp"
#include "ppr/util.hpp"

namespace ppr::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config_path;
  std::string templates_dir;
  std::string demo_pool;
  std::uint64_t seed = 0;

  json config() const {
    if (config_path.empty()) return json::object();
    return load_config(config_path);
  }
  ProviderSet providers() const {
    json c = config();
    return make_providers(c.value("providers", json::object()));
  }
  Templates templates() const { return templates_dir.empty() ? Templates::builtin() : Templates::load_dir(templates_dir); }
  std::vector<DemoExample> pool() const { return demo_pool.empty() ? builtin_demo_pool() : load_demo_pool(demo_pool); }
  Rewriter rewriter() const { return Rewriter(providers(), pool(), templates()); }
};

void add_config(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config_path, "TOML or JSON config ([providers] table, eval keys)");
}

void add_rewriter_files(CLI::App* sub, Common& c) {
  sub->add_option("--templates", c.templates_dir, "Directory with the four template .txt files");
  sub->add_option("--demo-pool", c.demo_pool, "JSON demonstration pool");
}

void add_seed(CLI::App* sub, Common& c) { sub->add_option("--seed", c.seed, "Random seed")->capture_default_str(); }

Corpus load_corpus(const std::string& path) { return ingest_jsonl(path, IngestOptions{0, 0}).corpus; }

const UserHistory& require_user(const Corpus& corpus, const std::string& user) {
  const UserHistory* h = corpus.find_user(user);
  if (!h) throw NotFoundError("unknown user: " + user);
  return *h;
}

void print(std::ostream& out, const json& j) { out << j.dump(2) << '\n'; }

json stats_json(const LengthStats& s) {
  json hist = json::object();
  for (const auto& [bucket, count] : s.histogram) hist[std::to_string(bucket)] = count;
  return {{"prompts", s.prompt_count},
          {"mean_words", s.mean_words},
          {"min_words", s.min_words},
          {"max_words", s.max_words},
          {"histogram", hist}};
}

json rewrite_json(const RewrittenPrompt& r) {
  return {{"text", r.text},
          {"mode", r.mode.label()},
          {"retrieved_ids", r.retrieved},
          {"demo_ids", r.demos_used},
          {"word_count", r.word_count},
          {"over_limit", r.over_limit},
          {"fell_back_to_general", r.fell_back_to_general},
          {"truncated", r.truncated}};
}

struct EvalArgs {
  Common common;
  std::string corpus;
  std::string split_manifest;
  std::string out_dir;
  std::size_t workers = 1;
  bool seed_given = false;
  bool sweep = false;
  std::size_t k = 3;
  int shots = 1;
  int steps = 50;
  double guidance = 7.0;
};

void add_eval_options(CLI::App* sub, EvalArgs& a) {
  add_config(sub, a.common);
  add_rewriter_files(sub, a.common);
  sub->add_option("--corpus", a.corpus, "Corpus JSONL (overrides config 'corpus')");
  sub->add_option("--split", a.split_manifest, "Split manifest JSON (default: split the corpus with --seed)");
  sub->add_option("--seed", a.common.seed, "Random seed (overrides config 'seed')")->capture_default_str();
  sub->add_option("--workers", a.workers, "Parallel sample workers")->capture_default_str();
  sub->add_option("--out", a.out_dir, "Output directory (overrides config 'output_dir')");
  sub->add_option("-k", a.k, "Retrieved history prompts for the headline grid")->capture_default_str();
  sub->add_option("--shots", a.shots, "In-context demonstrations for the headline grid")->capture_default_str();
  sub->add_option("--steps", a.steps, "Diffusion steps")->default_str("50");
  sub->add_option("--guidance", a.guidance, "Guidance scale")->default_str("7.0");
}

struct EvalSetup {
  json config_json;
  EvalConfig config;
  Corpus corpus;
  DatasetSplit split;
  std::string out_dir;
};

EvalSetup prepare_eval(const EvalArgs& a, CLI::App* sub) {
  EvalSetup s;
  s.config_json = a.common.config();
  json eval_keys = s.config_json.contains("eval") ? s.config_json.at("eval") : s.config_json;
  if (sub->count("--seed")) eval_keys["seed"] = a.common.seed;
  if (sub->count("--workers")) eval_keys["workers"] = a.workers;
  if (sub->count("-k")) eval_keys["k"] = a.k;
  if (sub->count("--shots")) eval_keys["shots"] = a.shots;
  if (sub->count("--steps")) eval_keys["generation"]["steps"] = a.steps;
  if (sub->count("--guidance")) eval_keys["generation"]["guidance"] = a.guidance;
  if (s.config_json.contains("providers")) eval_keys["providers"] = s.config_json.at("providers");
  s.config = EvalConfig::from_json(eval_keys);

  std::string corpus_path = a.corpus.empty() ? s.config_json.value("corpus", std::string()) : a.corpus;
  if (corpus_path.empty()) throw ValidationError("no corpus: pass --corpus or set 'corpus' in the config");
  s.corpus = load_corpus(corpus_path);
  std::string manifest = a.split_manifest.empty() ? s.config_json.value("split", std::string()) : a.split_manifest;
  s.split = manifest.empty() ? split(s.corpus, s.config.seed)
                             : split_from_manifest(json::parse(read_file(manifest)), s.corpus);
  s.out_dir = a.out_dir.empty() ? s.config_json.value("output_dir", std::string("eval_out")) : a.out_dir;
  fs::create_directories(s.out_dir);
  return s;
}

json write_run(const EvalRun& run, const std::string& dir, const std::string& stem, const ProviderSet& providers) {
  const fs::path d(dir);
  json files = json::object();
  for (auto [fmt, ext] : {std::pair{ReportFormat::Csv, ".csv"}, std::pair{ReportFormat::Json, ".json"},
                          std::pair{ReportFormat::Markdown, ".md"}}) {
    auto path = (d / (stem + ext)).string();
    emit_report(run.rows, fmt, path);
    files[std::string(ext + 1)] = path;
  }
  auto samples = (d / (stem + "_samples.jsonl")).string();
  write_file(samples, render_sample_log(run.sample_log));
  files["samples"] = samples;
  auto calls = (d / (stem + "_provider_calls.json")).string();
  write_file(calls, providers.log->to_json().dump(2) + "\n");
  files["provider_calls"] = calls;
  json rows = json::array();
  for (const auto& r : run.rows) rows.push_back(to_json(r));
  return {{"rows", rows}, {"files", files}};
}

}  // namespace

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Personalized prompt rewriting for text-to-image generation", "ppr"};
  app.require_subcommand(1, 1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Validate and filter a JSONL corpus");
  std::string ingest_in, ingest_out;
  IngestOptions ingest_opts;
  ingest->add_option("--input", ingest_in, "Raw JSONL")->required();
  ingest->add_option("--output", ingest_out, "Filtered JSONL");
  ingest->add_option("--min-images", ingest_opts.min_images, "Minimum records per user")->capture_default_str();
  ingest->add_option("--min-distinct", ingest_opts.min_distinct_prompts, "Minimum distinct prompts per user")
      ->capture_default_str();

  // split
  auto* split_cmd = app.add_subcommand("split", "Hold out two prompts per user");
  Common split_c;
  std::string split_corpus, split_out;
  split_cmd->add_option("--corpus", split_corpus, "Corpus JSONL")->required();
  split_cmd->add_option("--output", split_out, "Manifest path (default: stdout)");
  add_seed(split_cmd, split_c);

  // stats
  auto* stats = app.add_subcommand("stats", "Corpus statistics");
  std::string stats_corpus;
  stats->add_option("--corpus", stats_corpus, "Corpus JSONL")->required();

  // keywords
  auto* kw = app.add_subcommand("keywords", "Top TF-IDF keywords over user documents");
  std::string kw_corpus, kw_format = "json", kw_out;
  long kw_n = 250;
  bool kw_keep_stop = false;
  kw->add_option("--corpus", kw_corpus, "Corpus JSONL")->required();
  kw->add_option("-n", kw_n, "Number of keywords")->capture_default_str();
  kw->add_option("--format", kw_format, "json or csv")->check(CLI::IsMember({"json", "csv"}))->capture_default_str();
  kw->add_option("--output", kw_out, "Write to file instead of stdout");
  kw->add_flag("--keep-stopwords", kw_keep_stop, "Do not drop stopwords");

  // shorten
  auto* sh = app.add_subcommand("shorten", "Reduce a prompt to a noun, noun phrase or short sentence");
  Common sh_c;
  std::string sh_prompt, sh_scale = "short_sentence";
  sh->add_option("--prompt", sh_prompt, "Prompt text")->required();
  sh->add_option("--scale", sh_scale, "noun, noun_phrase or short_sentence")->capture_default_str();
  add_config(sh, sh_c);
  add_seed(sh, sh_c);

  // retrieve
  auto* rt = app.add_subcommand("retrieve", "Rank a user's history prompts against a query");
  Common rt_c;
  std::string rt_corpus, rt_user, rt_query, rt_method = "ebr";
  std::size_t rt_k = 3;
  std::vector<std::string> rt_exclude;
  rt->add_option("--corpus", rt_corpus, "Corpus JSONL")->required();
  rt->add_option("--user", rt_user, "User id")->required();
  rt->add_option("--query", rt_query, "Query prompt")->required();
  rt->add_option("--method", rt_method, "ebr or bm25")->capture_default_str();
  rt->add_option("-k", rt_k, "Number of results")->capture_default_str();
  rt->add_option("--exclude", rt_exclude, "Record ids to leave out");
  add_config(rt, rt_c);

  // rewrite
  auto* rw = app.add_subcommand("rewrite", "Rewrite a prompt");
  Common rw_c;
  std::string rw_corpus, rw_user, rw_prompt, rw_mode = "personalized", rw_retriever = "ebr";
  std::size_t rw_k = 3;
  int rw_shots = 1;
  rw->add_option("--corpus", rw_corpus, "Corpus JSONL (needed for personalized mode)");
  rw->add_option("--user", rw_user, "User id");
  rw->add_option("--prompt", rw_prompt, "Current prompt")->required();
  rw->add_option("--mode", rw_mode, "passthrough, general or personalized")->capture_default_str();
  rw->add_option("--retriever", rw_retriever, "ebr or bm25")->capture_default_str();
  rw->add_option("-k", rw_k, "Retrieved history prompts")->capture_default_str();
  rw->add_option("--shots", rw_shots, "In-context demonstrations (0 = context-independent)")->capture_default_str();
  add_config(rw, rw_c);
  add_rewriter_files(rw, rw_c);
  add_seed(rw, rw_c);

  // preference
  auto* pf = app.add_subcommand("preference", "Summarize a user's preference");
  Common pf_c;
  std::string pf_corpus, pf_user;
  pf->add_option("--corpus", pf_corpus, "Corpus JSONL")->required();
  pf->add_option("--user", pf_user, "User id")->required();
  add_config(pf, pf_c);
  add_rewriter_files(pf, pf_c);
  add_seed(pf, pf_c);

  // eval
  auto* ev = app.add_subcommand("eval", "Offline evaluation (method grid)");
  EvalArgs ev_a;
  add_eval_options(ev, ev_a);
  ev->add_flag("--sweep", ev_a.sweep, "Also run the shortening-scale sweep");

  // ablate
  auto* ab = app.add_subcommand("ablate", "Top-k and ICL-shot ablations");
  EvalArgs ab_a;
  add_eval_options(ab, ab_a);

  // serve
  auto* sv = app.add_subcommand("serve", "Run the A/B HTTP service");
  Common sv_c;
  std::string sv_host = "127.0.0.1", sv_state, sv_corpus;
  int sv_port = 8080;
  std::uint64_t sv_exp_seed = 0;
  long sv_duration_ms = 0;
  ServiceOptions sv_opts;
  sv->add_option("--host", sv_host, "Bind address")->capture_default_str();
  sv->add_option("--port", sv_port, "Port (0 = any free port)")->capture_default_str();
  sv->add_option("--state-dir", sv_state, "Directory for record, generation and feedback logs");
  sv->add_option("--corpus", sv_corpus, "Seed histories from this JSONL");
  sv->add_option("--experiment-seed", sv_exp_seed, "Arm assignment seed")->capture_default_str();
  sv->add_option("-k", sv_opts.k, "Retrieved history prompts")->capture_default_str();
  sv->add_option("--shots", sv_opts.shots, "In-context demonstrations")->capture_default_str();
  sv->add_option("--steps", sv_opts.generation.steps, "Diffusion steps")->default_str("50");
  sv->add_option("--guidance", sv_opts.generation.guidance, "Guidance scale")->default_str("7.0");
  sv->add_option("--duration-ms", sv_duration_ms, "Stop after this long (0 = run until killed)")
      ->capture_default_str();
  add_config(sv, sv_c);
  add_rewriter_files(sv, sv_c);
  add_seed(sv, sv_c);

  // report
  auto* rp = app.add_subcommand("report", "Render an eval report or the A/B report");
  std::string rp_input, rp_format = "markdown", rp_state;
  rp->add_option("--input", rp_input, "JSON eval report");
  rp->add_option("--format", rp_format, "csv, json or markdown")->capture_default_str();
  rp->add_option("--state-dir", rp_state, "Service state directory (A/B report)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (ingest->parsed()) {
      auto res = ingest_jsonl(ingest_in, ingest_opts);
      if (!ingest_out.empty()) {
        std::ofstream f(ingest_out, std::ios::binary | std::ios::trunc);
        if (!f) throw Error("cannot write " + ingest_out);
        export_jsonl(res.corpus, f);
      }
      const auto& s = res.summary;
      print(out, {{"lines", s.lines},
                  {"users_kept", s.users_kept},
                  {"users_dropped", s.users_dropped},
                  {"records_kept", s.records_kept},
                  {"records_dropped", s.records_dropped}});
    } else if (split_cmd->parsed()) {
      auto corpus = load_corpus(split_corpus);
      auto sp = split(corpus, split_c.seed);
      json manifest = split_manifest(sp);
      if (split_out.empty()) {
        print(out, manifest);
      } else {
        write_file(split_out, manifest.dump(2) + "\n");
        print(out, {{"seed", split_c.seed},
                    {"users", sp.test.size()},
                    {"train", sp.train_size()},
                    {"test", sp.test_size()},
                    {"manifest", split_out}});
      }
    } else if (stats->parsed()) {
      auto corpus = load_corpus(stats_corpus);
      print(out, {{"users", corpus.user_count()},
                  {"records", corpus.record_count()},
                  {"lengths", stats_json(length_stats(corpus))}});
    } else if (kw->parsed()) {
      auto corpus = load_corpus(kw_corpus);
      auto words = top_keywords(corpus, kw_n, kw_keep_stop ? nullptr : &Lexicon::builtin().stopwords());
      std::string text;
      if (kw_format == "csv") {
        text = keywords_to_csv(words);
      } else {
        json a = json::array();
        for (const auto& w : words) a.push_back({{"term", w.term}, {"weight", w.weight}});
        text = a.dump(2) + "\n";
      }
      if (kw_out.empty())
        out << text;
      else
        write_file(kw_out, text);
    } else if (sh->parsed()) {
      auto providers = sh_c.providers();
      ShortenOptions so;
      so.chat = providers.chat.get();
      so.seed = sh_c.seed;
      auto scale = parse_shorten_scale(sh_scale);
      print(out, {{"scale", to_string(scale)}, {"x_t", shorten(sh_prompt, scale, so)}});
    } else if (rt->parsed()) {
      auto corpus = load_corpus(rt_corpus);
      const auto& h = require_user(corpus, rt_user);
      auto providers = rt_c.providers();
      std::set<std::string> exclude(rt_exclude.begin(), rt_exclude.end());
      auto results = retrieve(h, rt_query, parse_retrieval_method(rt_method), rt_k, exclude, providers.text.get());
      json a = json::array();
      for (const auto& r : results)
        a.push_back({{"rank", r.rank}, {"record_id", r.record_id}, {"score", r.score}, {"prompt", r.prompt_text}});
      print(out, {{"user_id", rt_user}, {"method", to_string(parse_retrieval_method(rt_method))}, {"results", a}});
    } else if (rw->parsed()) {
      RewriteMode mode = RewriteMode::parse(rw_mode);
      if (mode.kind == RewriteMode::Kind::PersonalizedPR) {
        mode.retriever = parse_retrieval_method(rw_retriever);
        mode.icl_shots = rw_shots;
      }
      UserHistory h{rw_user, {}};
      if (mode.kind == RewriteMode::Kind::PersonalizedPR) {
        if (rw_corpus.empty() || rw_user.empty())
          throw ValidationError("personalized mode needs --corpus and --user");
        auto corpus = load_corpus(rw_corpus);
        h = require_user(corpus, rw_user);
      }
      Rewriter rewriter = rw_c.rewriter();
      RewriteOptions ro;
      ro.k = rw_k;
      ro.seed = rw_c.seed;
      json j = rewrite_json(rewriter.rewrite(h, rw_prompt, mode, ro));
      j["user_id"] = rw_user;
      print(out, j);
    } else if (pf->parsed()) {
      auto corpus = load_corpus(pf_corpus);
      const auto& h = require_user(corpus, pf_user);
      auto p = pf_c.rewriter().summarize_preference(h, pf_c.seed);
      print(out, {{"user_id", p.user_id}, {"phrases", p.phrases}, {"source_sample", p.source_sample}});
    } else if (ev->parsed() || ab->parsed()) {
      const bool ablate = ab->parsed();
      const EvalArgs& a = ablate ? ab_a : ev_a;
      EvalSetup s = prepare_eval(a, ablate ? ab : ev);
      auto providers = make_providers(s.config.providers);
      Rewriter rewriter(providers, a.common.pool(), a.common.templates());
      Evaluator evaluator(rewriter, s.config);
      err << "ppr: evaluating " << s.split.test_size() << " samples with " << s.config.workers << " worker(s)\n";
      json result;
      if (ablate) {
        result["ablations"] = write_run(evaluator.run_ablations(s.corpus, s.split), s.out_dir, "ablations", providers);
      } else {
        result["main"] = write_run(evaluator.run_offline(s.corpus, s.split), s.out_dir, "report", providers);
        if (a.sweep)
          result["scales"] = write_run(evaluator.run_scale_sweep(s.corpus, s.split), s.out_dir, "scales", providers);
      }
      write_file((fs::path(s.out_dir) / "config.json").string(), s.config.to_json().dump(2) + "\n");
      print(out, result);
    } else if (sv->parsed()) {
      sv_opts.state_dir = sv_state;
      sv_opts.experiment_seed = sv_exp_seed;
      sv_opts.seed = sv_c.seed;
      Service service(sv_c.providers(), sv_opts, sv_c.pool(), sv_c.templates());
      if (!sv_corpus.empty()) {
        auto added = service.import_corpus(load_corpus(sv_corpus));
        err << "ppr: imported " << added << " records\n";
      }
      HttpServer server(service);
      int port = server.start(sv_host, sv_port);
      out << json{{"host", sv_host}, {"port", port}}.dump() << std::endl;
      err << "ppr: serving on http://" << sv_host << ":" << port << "\n";
      if (sv_duration_ms > 0) {
        std::this_thread::sleep_for(std::chrono::milliseconds(sv_duration_ms));
        server.stop();
      }
      server.wait();
    } else if (rp->parsed()) {
      if (rp_input.empty() == rp_state.empty()) throw ValidationError("pass exactly one of --input or --state-dir");
      if (!rp_input.empty()) {
        auto rows = parse_json_report(json::parse(read_file(rp_input)));
        out << render_report(rows, parse_report_format(rp_format));
      } else {
        AbLedger ledger((fs::path(rp_state) / "generations.jsonl").string(),
                        (fs::path(rp_state) / "feedback.jsonl").string());
        print(out, ledger.report().to_json());
      }
    }
  } catch (const json::exception& e) {
    err << "ppr: error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "ppr: error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace ppr::cli
