#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "ppr/error.hpp"
#include "ppr/eval.hpp"
#include "ppr/synth.hpp"
#include "ppr/util.hpp"

using namespace ppr;
using nlohmann::json;

namespace {

Corpus bundled(const std::string& name) {
  return ingest_jsonl(std::string(PPR_SOURCE_DIR) + "/data/" + name).corpus;
}

// Chat that fails rewrite requests whose current prompt contains a needle.
class FlakyChat : public ChatModel {
 public:
  explicit FlakyChat(std::string needle) : needle_(std::move(needle)) {}

 protected:
  ChatResult do_complete(std::string_view prompt, std::uint64_t seed) override {
    auto at = prompt.find("The current prompt is:");
    if (at != std::string_view::npos && prompt.substr(at).find(needle_) != std::string_view::npos)
      throw ProviderError("flaky", true, 503);
    return inner_.complete(prompt, seed);
  }

 private:
  std::string needle_;
  MockChatModel inner_;
};

}  // namespace

TEST(EvalConfig, DefaultsAndValidation) {
  EvalConfig c;
  EXPECT_EQ(c.k, 3u);
  EXPECT_EQ(c.shots, 1);
  EXPECT_EQ(c.k_list, (std::vector<std::size_t>{1, 3, 5, 7}));
  EXPECT_EQ(c.shot_list, (std::vector<int>{1, 3, 5}));
  EXPECT_EQ(c.methods.size(), 6u);
  auto back = EvalConfig::from_json(json::parse(c.to_json().dump()));
  EXPECT_EQ(back.to_json(), c.to_json());
  EXPECT_THROW(EvalConfig::from_json(json{{"k", 0}}), ValidationError);
  EXPECT_THROW(EvalConfig::from_json(json{{"methods", {"nope"}}}), ValidationError);
  EXPECT_THROW(EvalConfig::from_json(json{{"k_list", "1"}}), ValidationError);
}

TEST(Eval, HeadlineGridRows) {
  Corpus c = bundled("synthetic_10users.jsonl");
  Rewriter rw(make_mock_providers());
  Evaluator ev(rw, EvalConfig{});
  auto run = ev.run_offline(c, split(c, 1));
  std::vector<std::string> labels;
  for (const auto& r : run.rows) labels.push_back(r.method);
  EXPECT_EQ(labels, (std::vector<std::string>{"passthrough", "general", "personalized:bm25:0", "personalized:ebr:0",
                                              "personalized:bm25:1", "personalized:ebr:1"}));
  for (const auto& r : run.rows) {
    EXPECT_EQ(r.n_samples, 20u);
    EXPECT_EQ(r.n_failed, 0u);
    EXPECT_GE(r.pms, 0.0);
    EXPECT_LE(r.pms, 2.5);
    EXPECT_GE(r.rouge_l, 0.0);
    EXPECT_LE(r.rouge_l, 1.0);
    EXPECT_GE(r.image_align, 0.0);
    EXPECT_LE(r.image_align, 1.0);
  }
  EXPECT_EQ(run.rows[0].retriever, "-");
  EXPECT_EQ(run.rows[0].k, 0u);
  EXPECT_EQ(run.rows[5].retriever, "ebr");
  EXPECT_EQ(run.rows[5].k, 3u);
  EXPECT_EQ(run.rows[5].shots, 1);
  EXPECT_EQ(run.sample_log.size(), 20u * 6u);
}

TEST(Eval, UnshortenedPassthroughScoresOne) {
  Corpus c = bundled("synthetic_10users.jsonl");
  Rewriter rw(make_mock_providers());
  EvalConfig cfg;
  cfg.methods = {RewriteMode::passthrough()};
  cfg.shorten_inputs = false;
  auto run = Evaluator(rw, cfg).run_offline(c, split(c, 3));
  EXPECT_DOUBLE_EQ(run.rows[0].rouge_l, 1.0);
  EXPECT_NEAR(run.rows[0].image_align, 1.0, 1e-12);
}

TEST(Eval, AggregatesEqualMeansOfSampleLog) {
  Corpus c = bundled("synthetic_10users.jsonl");
  Rewriter rw(make_mock_providers());
  auto run = Evaluator(rw, EvalConfig{}).run_offline(c, split(c, 5));
  for (const auto& row : run.rows) {
    double r = 0, p = 0, a = 0;
    std::size_t n = 0;
    for (const auto& s : run.sample_log) {
      if (s.at("method") != row.method || s.at("status") != "ok") continue;
      r += s.at("metrics").at("rouge_l").get<double>();
      p += s.at("metrics").at("pms").get<double>();
      a += s.at("metrics").at("image_align").get<double>();
      ++n;
    }
    ASSERT_EQ(n, row.n_samples);
    EXPECT_NEAR(row.rouge_l, r / n, 1e-12);
    EXPECT_NEAR(row.pms, p / n, 1e-12);
    EXPECT_NEAR(row.image_align, a / n, 1e-12);
  }
}

TEST(Eval, SampleLogSchemaAndOrder) {
  Corpus c = bundled("synthetic_10users.jsonl");
  Rewriter rw(make_mock_providers());
  auto run = Evaluator(rw, EvalConfig{}).run_offline(c, split(c, 5));
  std::string prev;
  for (const auto& s : run.sample_log) {
    for (const char* key : {"user_id", "record_id", "scale", "method", "x_t", "rewritten", "retrieved_ids", "metrics"})
      EXPECT_TRUE(s.contains(key)) << key;
    std::string key = s.at("user_id").get<std::string>() + "/" + s.at("record_id").get<std::string>();
    EXPECT_LE(prev, key);
    prev = key;
  }
}

TEST(Eval, NoHeldOutIdIsEverRetrieved) {
  Corpus c = bundled("synthetic_50users.jsonl");
  auto sp = split(c, 11);
  Rewriter rw(make_mock_providers());
  EvalConfig cfg;
  cfg.workers = 4;
  auto run = Evaluator(rw, cfg).run_offline(c, sp);
  std::size_t checked = 0;
  for (const auto& s : run.sample_log) {
    auto held = sp.test_ids(s.at("user_id"));
    for (const auto& id : s.at("retrieved_ids")) {
      EXPECT_FALSE(held.count(id.get<std::string>()));
      ++checked;
    }
  }
  EXPECT_GT(checked, 0u);
}

TEST(Eval, DeterministicAcrossWorkerCounts) {
  Corpus c = bundled("synthetic_10users.jsonl");
  auto sp = split(c, 2);
  auto render = [&](std::size_t workers) {
    Rewriter rw(make_mock_providers());
    EvalConfig cfg;
    cfg.workers = workers;
    cfg.seed = 9;
    auto run = Evaluator(rw, cfg).run_offline(c, sp);
    return render_report(run.rows, ReportFormat::Json) + render_sample_log(run.sample_log);
  };
  auto one = render(1);
  EXPECT_EQ(one, render(1));
  EXPECT_EQ(one, render(8));
}

TEST(Eval, ScaleSweepGroupsAndMonotoneInputs) {
  Corpus c = bundled("synthetic_10users.jsonl");
  Rewriter rw(make_mock_providers());
  auto run = Evaluator(rw, EvalConfig{}).run_scale_sweep(c, split(c, 1));
  ASSERT_EQ(run.rows.size(), 6u);
  EXPECT_EQ(run.rows[0].scale, "noun");
  EXPECT_EQ(run.rows[2].scale, "noun_phrase");
  EXPECT_EQ(run.rows[4].scale, "short_sentence");
  std::map<std::string, std::map<std::string, std::size_t>> words;
  for (const auto& s : run.sample_log)
    if (s.at("method") == "passthrough") words[s.at("record_id")][s.at("scale")] = word_count(s.at("x_t").get<std::string>());
  for (const auto& [id, w] : words) {
    EXPECT_LE(w.at("noun"), w.at("noun_phrase")) << id;
    EXPECT_LE(w.at("noun_phrase"), w.at("short_sentence")) << id;
  }
}

TEST(Eval, AblationGridShapeAndKBound) {
  Corpus c = bundled("synthetic_10users.jsonl");
  Rewriter rw(make_mock_providers());
  EvalConfig cfg;
  auto run = Evaluator(rw, cfg).run_ablations(c, split(c, 1));
  ASSERT_EQ(run.rows.size(), cfg.k_list.size() + cfg.retrievers.size() * cfg.shot_list.size());
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(run.rows[i].k, cfg.k_list[i]);
    EXPECT_EQ(run.rows[i].retriever, "ebr");
    EXPECT_EQ(run.rows[i].shots, 1);
  }
  std::vector<std::pair<std::string, int>> shots;
  for (std::size_t i = 4; i < run.rows.size(); ++i) {
    EXPECT_EQ(run.rows[i].k, 3u);
    shots.emplace_back(run.rows[i].retriever, run.rows[i].shots);
  }
  EXPECT_EQ(shots, (std::vector<std::pair<std::string, int>>{
                       {"bm25", 1}, {"bm25", 3}, {"bm25", 5}, {"ebr", 1}, {"ebr", 3}, {"ebr", 5}}));
  for (const auto& s : run.sample_log) {
    EXPECT_LE(s.at("retrieved_ids").size(), s.at("k").get<std::size_t>());
    if (s.at("k") == 1) EXPECT_LE(s.at("retrieved_ids").size(), 1u);
  }
}

TEST(Eval, FailedSamplesExcludedAndCounted) {
  Corpus c = bundled("synthetic_50users.jsonl");
  auto sp = split(c, 1);
  // Fail rewrites whose current prompt mentions a rare subject.
  std::size_t affected = 0;
  for (const auto& [u, recs] : sp.test)
    for (const auto& r : recs) affected += r.prompt_text.find("violin") != std::string::npos;
  ASSERT_GT(affected, 0u);
  ASSERT_LE(affected * 10, sp.test_size());

  auto p = make_mock_providers();
  p.chat = std::make_shared<FlakyChat>("");
  EvalConfig cfg;
  cfg.methods = {RewriteMode::passthrough(), RewriteMode::personalized()};
  // Chat now fails for every personalized request: > 10% failures aborts.
  EXPECT_THROW(Evaluator(Rewriter(p), cfg).run_offline(c, sp), Error);

  auto q = make_mock_providers();
  q.chat = std::make_shared<FlakyChat>("violin");
  Rewriter rw(q);
  cfg.shorten_inputs = false;
  auto run = Evaluator(rw, cfg).run_offline(c, sp);
  EXPECT_EQ(run.rows[1].n_failed, affected);
  EXPECT_EQ(run.rows[1].n_samples + run.rows[1].n_failed, sp.test_size());
  EXPECT_EQ(run.rows[0].n_failed, 0u);
}

TEST(Report, CsvJsonMarkdown) {
  std::vector<EvalRow> rows{{"passthrough", "-", 0, 0, "short_sentence", 0.5, 0.25, 0.1, 10, 1},
                            {"personalized:ebr:1", "ebr", 3, 1, "short_sentence", 0.6179, 0.6796, 0.4686, 9, 0}};
  auto csv = render_report(rows, ReportFormat::Csv);
  std::istringstream lines(csv);
  std::string line;
  std::vector<std::string> all;
  while (std::getline(lines, line)) all.push_back(line);
  ASSERT_EQ(all.size(), 3u);
  EXPECT_EQ(all[0], "method,retriever,k,shots,scale,PMS,Image-Align,ROUGE-L,n,failed");
  EXPECT_EQ(all[2], "personalized:ebr:1,ebr,3,1,short_sentence,0.6179,0.6796,0.4686,9,0");

  EXPECT_EQ(parse_json_report(json::parse(render_report(rows, ReportFormat::Json))), rows);

  auto md = render_report(rows, ReportFormat::Markdown);
  std::size_t separators = 0;
  std::istringstream mdl(md);
  while (std::getline(mdl, line)) separators += line.rfind("|---", 0) == 0;
  EXPECT_EQ(separators, 1u);
  EXPECT_NE(md.find("| Personalized PR + ICL | EBR | 3 | 1 |"), std::string::npos);
  EXPECT_NE(md.find("| Shortened Prompt | - | - | - |"), std::string::npos);

  EXPECT_THROW(render_report({}, ReportFormat::Csv), ValidationError);
  EXPECT_THROW(emit_report(rows, ReportFormat::Csv, "/nonexistent-dir/x/report.csv"), Error);
  EXPECT_EQ(parse_report_format("md"), ReportFormat::Markdown);
}

TEST(Eval, RejectsSplitFromAnotherCorpus) {
  Corpus a = bundled("synthetic_10users.jsonl");
  Corpus b = synth::to_corpus(synth::style_oracle_histories(3, 1));
  Rewriter rw(make_mock_providers());
  EXPECT_THROW(Evaluator(rw, EvalConfig{}).run_offline(b, split(a, 1)), ValidationError);
}
